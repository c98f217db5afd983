import pytest

ACCEPTANCE_LINES = pytest.StashKey[list]()

SMALL_CONFIG = """\
syn_clusters = 2
syn_items_per_cluster = 300
syn_users = 40
syn_seq_len = 30
syn_topics = 5
syn_dim = 16
cb_k = 16
cb_pool = 600
d_model = 16
heads = 2
layers_light = 1
layers_refined = 1
d_ff = 32
s = 2
w = 4
n_last = 5
l_max = 20
steps = 12
batch = 8
m = 4
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG)
    return path


@pytest.fixture
def report(request):
    """Record one pass/fail line for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def _report(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
        lines.append((number, line))
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
