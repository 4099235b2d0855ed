"""Desk-scale workbench for indoor free-space perception with single-chip
FMCW mmWave radar.

Subpackages / modules:

- ``tensor``     FFT helpers, windows, and the RTEN binary tensor format
- ``grids``      the shared 128x128 polar BEV grid geometry
- ``dsp``        ADC cube -> range-Doppler / range-angle tensors, CFAR,
                 conventional point-cloud generation
- ``simworld``   synthetic indoor scenes, trajectories, LiDAR and radar echoes
- ``labelgen``   occupancy-grid based unobstructed-FoV label generation
- ``nn``         from-scratch segmentation network (forward + backward),
                 loss, Adam, training loop
- ``evaluation`` segmentation metrics, threshold sweeps, binned analyses
- ``cli``        the ``radarfov`` command-line pipeline
"""

__version__ = "0.1.0"
