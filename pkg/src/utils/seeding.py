"""
Reproductibilité: graine globale et mode déterministe mono-thread.

Le générateur global de torch est partagé entre les threads d'un même processus.
Toute construction de module qui y puise passe par `seeded_init`, et
`seed_everything` ne le réensemence que sous le même verrou.
"""
import random
import threading
from contextlib import contextmanager
from typing import Iterator

import numpy as np
import torch

_GLOBAL_RNG_LOCK = threading.RLock()


def seed_everything(seed: int) -> torch.Generator:
    """
    Fixe toutes les graines et force un calcul déterministe sur un seul thread.

    Returns:
        Un générateur torch dédié, initialisé avec la même graine.
    """
    with _GLOBAL_RNG_LOCK:
        random.seed(seed)
        np.random.seed(seed % (2**32))
        torch.manual_seed(seed)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True, warn_only=True)
    return make_generator(seed)


@contextmanager
def seeded_init(seed: int) -> Iterator[None]:
    """
    Initialise des modules torch à partir du générateur global réensemencé avec `seed`.

    L'état du générateur global est restauré en sortie, et aucun autre thread ne
    peut le modifier pendant la construction.
    """
    with _GLOBAL_RNG_LOCK, torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator
