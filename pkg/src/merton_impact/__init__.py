"""Small-impact asymptotics for Merton portfolios under nonlinear price impact."""

__version__ = "0.1.0"
