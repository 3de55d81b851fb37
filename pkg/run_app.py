"""
Script de lancement du laboratoire absolute-win.

Exemple:
    python run_app.py pretrain --set task=mae --set steps=2000 --seeds 3 --workers 3
"""
from dotenv import load_dotenv

# Chargement des variables d'environnement (ABSWIN_*)
load_dotenv()

from src.main import cli  # noqa: E402


def main():
    cli(prog_name="abswin")


if __name__ == "__main__":
    main()
