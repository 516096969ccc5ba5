from cystseg.selfcheck import CHECKS, run_selfcheck


def test_all_checks_pass():
    lines = []
    ok = run_selfcheck(out=lines.append)
    assert ok
    assert len(lines) == len(CHECKS)
    assert all(line.startswith("[PASS] ") for line in lines)
    names = {line.split()[1].rstrip(":") for line in lines}
    # the suite exercises gradients, kernels, metrics, and serialization
    assert any("grad" in n for n in names)
    assert any("nlm" in n for n in names)
    assert any("checkpoint" in n for n in names)
