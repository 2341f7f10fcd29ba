"""Flag tampered object-detection outputs by checking each detected object
against the context predicted from the others."""

__version__ = "0.1.0"
