"""Klein-Gordon kernels, integral transforms, maximum-principle checks and
bubble simulations for the Higgs-type equation in de Sitter space."""

__version__ = "0.1.0"
