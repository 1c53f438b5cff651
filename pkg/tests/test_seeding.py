from src.seeding import assign_seeds, derive_seed, make_rng, spawn_generators


def test_derive_seed_is_stable_and_key_sensitive():
    assert derive_seed(7, "labeler", "gmm") == derive_seed(7, "labeler", "gmm")
    assert derive_seed(7, "labeler", "gmm") != derive_seed(7, "labeler", "subsample")
    assert derive_seed(7, "x") != derive_seed(8, "x")
    assert 0 <= derive_seed(123456789, "window", 10) < 2 ** 31


def test_make_rng_streams_repeat():
    assert make_rng(3, "shuffle").random() == make_rng(3, "shuffle").random()


def test_assign_seeds_fills_only_missing_values():
    tree = {"labeler": {"seed": None}, "models": [{"seed": 5}, {"seed": None}]}
    resolved = assign_seeds(tree, 7)
    assert tree["labeler"]["seed"] is None
    assert resolved["models"][0]["seed"] == 5
    assert resolved["labeler"]["seed"] == derive_seed(7, "labeler.seed")
    assert resolved == assign_seeds(tree, 7)


def test_spawned_generators_are_independent_and_reproducible():
    first = [g.random() for g in spawn_generators(11, 3)]
    second = [g.random() for g in spawn_generators(11, 3)]
    assert first == second
    assert len(set(first)) == 3
