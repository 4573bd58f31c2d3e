"""Polarization tomography for quantum imaging with undetected photons.

Forward model of a two-crystal induced-coherence interferometer, synthetic
phase scans, sinusoid fitting and Jones-matrix reconstruction.
"""

__version__ = "0.1.0"

from .interferometer import (Detector, LossModel, NonPassiveObjectError, ProbeState,
                             SourceConfig, ThetaSetting, TwoPhotonState, run_forward, wrap_phase)
from .analytic import (AmplitudePair, JonesObject, amplitudes, counts_general, counts_no_object,
                       counts_with_object, fringe, random_passive_object, to_matrix, visibility)
from .acquisition import (AcquisitionConfig, FringeDataset, Scene, acquire, load_dataset,
                          save_dataset, standard_battery)
from .fitting import SinusoidFit, fit_arrays, fit_sinusoid, visibility_of
from .tomography import (HVFits, Reconstruction, RefineOptions, calibrate_T, characterize_probe,
                         extract_hv, reconstruct, refine_global)
