"""
Absolute-win: embeddings de position pour l'attention par fenêtres, modèle Hiera-lite et diagnostics.
"""
