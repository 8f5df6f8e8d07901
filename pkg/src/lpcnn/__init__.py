"""Log-polar pre-processing for a small MNIST CNN, with the rotation, scale and
compression experiments that go with it."""

__version__ = "0.1.0"
