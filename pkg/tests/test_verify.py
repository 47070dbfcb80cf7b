import time

from modnorm.sharpness import SharpnessTriple
import modnorm.verify as verify


def test_fast_suite_green_within_budget():
    started = time.perf_counter()
    results = verify.verify_suite("fast")
    elapsed = time.perf_counter() - started
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
    assert elapsed < 60.0, f"fast level took {elapsed:.1f}s"


def test_result_lines_name_slack_and_tolerance():
    result = verify.check_broadcast_cases("fast")
    line = result.line()
    assert line.startswith("PASS") and "slack" in line and "tol" in line


def test_mutated_cross_term_breaks_associativity(monkeypatch):
    # flip the sign of the weight-input cross coefficient in the composition
    # rule; the associativity check must catch it
    def corrupted(t1, t2):
        p1, p2 = t1.mass / (t1.mass + t2.mass), t2.mass / (t1.mass + t2.mass)
        mu1, mu2 = t1.sensitivity, t2.sensitivity
        alpha = (
            p1 * p1 * t1.alpha / mu2
            + p2 * p2 * t2.alpha
            + 2.0 * p1 * p2 * t2.beta / mu2
            + p1 * p1 * t2.gamma / (mu2 * mu2)
        )
        beta = p1 * t1.beta - mu1 * p2 * t2.beta + (mu1 / mu2) * p1 * t2.gamma
        beta = abs(beta)
        gamma = mu2 * t1.gamma + mu1 * mu1 * t2.gamma
        return SharpnessTriple(alpha, beta, gamma, mu1 * mu2, t1.mass + t2.mass)

    monkeypatch.setattr(verify, "compose_sharpness", corrupted)
    assert not verify.check_sharpness_associativity("fast").passed


def test_mutated_scale_rule_breaks_normalization(monkeypatch):
    # dropping the downstream-sensitivity coupling from the flattened scales
    # must break the unit-normalization check
    import modnorm.norms as norms

    original = norms.compute_scales

    def corrupted(m):
        norms._scale_cache.pop(m, None)
        scales = [s for s in original(m)]
        norms._scale_cache.pop(m, None)
        return [
            s if s.frozen else type(s)(s.leaf_index, s.scale * 1.5, s.norm_kind, s.frozen)
            for s in scales
        ]

    monkeypatch.setattr(verify, "modular_norm", lambda m, w: _norm_with(corrupted, m, w))
    assert not verify.check_unit_normalize("fast").passed


def _norm_with(scale_fn, m, w):
    from modnorm.norms import atom_norm

    best = 0.0
    for ls, atom, leaf in zip(scale_fn(m), m.atoms(), w):
        if ls.frozen:
            continue
        best = max(best, ls.scale * atom_norm(atom, leaf))
    return best
