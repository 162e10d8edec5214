from swbce import gradcheck


def test_defaults_pass():
    rows = gradcheck.run()
    assert len(rows) == 6
    assert all(r.passed and r.trials == 20 for r in rows)


def test_zero_tolerance_fails():
    assert not any(r.passed for r in gradcheck.run(trials=2, tol=0.0))


def test_seeded_table_is_reproducible():
    assert gradcheck.run(seed=5, trials=3) == gradcheck.run(seed=5, trials=3)
