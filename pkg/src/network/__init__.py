"""
Réseau: attention, Hiera-lite, dérivation automatique et optimiseurs.
"""
