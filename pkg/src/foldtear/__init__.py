"""foldtear: a point-cloud autoencoder that folds a 2D patch into 3D and
tears the patch graph to match the target topology."""

__version__ = "0.1.0"
