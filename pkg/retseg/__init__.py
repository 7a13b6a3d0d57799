"""
retseg: retinal vessel segmentation with SA-UNet and synthetic-data training.
"""

__version__ = '0.1.0'
