"""
Expériences: données synthétiques, entraînement, benchmark et commandes.
"""
