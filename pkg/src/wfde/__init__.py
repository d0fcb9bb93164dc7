"""Numerical toolkit for the weighted fast diffusion equation u_t = |x|^gamma div(|x|^-beta grad u^m)."""

__version__ = "0.1.0"
