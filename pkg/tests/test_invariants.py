"""Property-suite runner: all suites green on healthy code, and the
deliberate-corruption hook proves the suites can actually fail."""

import pytest

from hkconv import invariants as iv
from hkconv.errors import ParameterError


class TestSuites:
    def test_every_suite_passes_on_healthy_code(self):
        for name in iv.SUITES:
            records = iv.run_suite(name, trials=40, seed=0)
            assert records, name
            for rec in records:
                assert rec["passed"], (name, rec)
                assert rec["trials"] >= 1
                assert rec["max_error"] >= 0.0

    def test_records_carry_stable_fields(self):
        records = iv.run_suite("manifold", trials=10, seed=1)
        for rec in records:
            assert set(rec) >= {"name", "trials", "max_error", "passed"}

    def test_unknown_suite_is_rejected(self):
        with pytest.raises(ParameterError):
            iv.run_suite("everything", trials=5)

    def test_corrupted_transport_is_detected(self):
        # the mutation hook injects a source-dependent drift into parallel
        # transport; the translation-invariance suite must catch it
        healthy = iv.run_suite("theorem1", trials=20, seed=0)
        assert all(rec["passed"] for rec in healthy)
        corrupted = iv.run_suite("theorem1", trials=20, seed=0, mutate="pt")
        assert any(not rec["passed"] for rec in corrupted)

    def test_corruption_is_scoped_to_the_run(self):
        iv.run_suite("theorem1", trials=5, seed=0, mutate="pt")
        records = iv.run_suite("theorem1", trials=5, seed=0)
        assert all(rec["passed"] for rec in records)

    def test_unknown_mutation_is_rejected(self):
        with pytest.raises(ParameterError):
            iv.run_suite("manifold", trials=5, mutate="teleport")
