"""Hidden Nambu structure in Hamiltonian systems: brackets, flows and ensembles."""

__version__ = "0.1.0"
