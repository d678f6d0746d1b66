"""Lax-Oleinik semigroup experiments for Hamilton-Jacobi equations on the flat torus."""
