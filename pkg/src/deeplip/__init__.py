"""Audio-visual lip biometrics: lip-movement and voice embeddings, scoring backends,
fusion and verification evaluation."""

__version__ = "0.1.0"
