"""CT volume standardization, anatomy mask archiving and robust voxel radiomics."""

__version__ = "0.1.0"
