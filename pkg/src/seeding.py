"""
Deterministic seed derivation for every stage of a run
"""

import copy
import zlib
from typing import Any, Dict, Optional

import numpy as np

from .logger import get_logger

logger = get_logger("seeding")


def _key_entropy(key: Any) -> int:
    """Stable integer for a derivation key (str hash() is salted per process)"""
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(root: int, *keys: Any) -> int:
    """
    Derive a child seed from a root seed and a path of keys.

    The same (root, keys) always produces the same 31-bit seed, independent of
    process, platform and call order.

    Args:
        root: Global run seed.
        *keys: Stage names, window sizes, bond indexes, ...

    Returns:
        int: Seed in range 0 to 2^31-1
    """
    entropy = [int(root) & 0xFFFFFFFFFFFFFFFF] + [_key_entropy(k) for k in keys]
    sequence = np.random.SeedSequence(entropy)
    # 31 bits keeps the value a valid signed 32-bit integer everywhere
    return int(sequence.generate_state(1, dtype=np.uint32)[0] >> 1)


def make_rng(root: int, *keys: Any) -> np.random.Generator:
    """Generator seeded from derive_seed(root, *keys)"""
    return np.random.default_rng(derive_seed(root, *keys))


def assign_seeds(tree: Dict[str, Any], root: int) -> Dict[str, Any]:
    """
    Fill every ``seed`` left as None in a nested settings tree.

    Walks all dicts and lists; each missing seed is derived from the root seed and
    the path it sits at, so the result only depends on (root, tree shape).

    Args:
        tree: Nested settings dictionary
        root: Global run seed

    Returns:
        dict: Deep copy with all seeds resolved
    """
    tree = copy.deepcopy(tree)
    assigned = [0]
    _assign_in_obj(tree, root, path="", assigned=assigned)
    if assigned[0]:
        logger.debug(f"Derived {assigned[0]} stage seed(s) from root seed {root}")
    return tree


def _assign_in_obj(obj, root: int, path: str, assigned: list):
    """Recursively resolve seeds in nested structures"""
    if isinstance(obj, dict):
        for key, value in obj.items():
            current_path = f"{path}.{key}" if path else key
            if key == "seed" and value is None:
                obj[key] = derive_seed(root, current_path)
                assigned[0] += 1
            else:
                _assign_in_obj(value, root, current_path, assigned)
    elif isinstance(obj, list):
        for idx, item in enumerate(obj):
            _assign_in_obj(item, root, f"{path}[{idx}]", assigned)


def spawn_generators(seed: Optional[int], count: int):
    """Independent per-item generators (e.g. one per bond) from one seed"""
    children = np.random.SeedSequence(0 if seed is None else int(seed)).spawn(count)
    return [np.random.default_rng(child) for child in children]
