"""psfforge: engineered PSF pairs for dense 3D particle localization.

Fourier-optics forward model, EDOF and CRLB-optimal phase-mask design,
dense-scene synthesis with realistic camera noise, a matched-filter baseline
localizer, matching metrics, dual-channel calibration and track linking.
"""

__version__ = "0.1.0"
