import sys

import pytest

from dialmat.dialworld import dataset as D

TINY_YAML = """\
env:
  n_train: 20
  n_valid_seen: 5
  n_pseudo_valid: 3
  n_pseudo_test: 4
  n_seen_layouts: 4
  n_unseen_layouts: 4
train:
  epochs: 1
questioner:
  pretrain: {epochs: 2}
  rl: {iterations: 2, episodes_per_iter: 4}
"""


@pytest.fixture(scope="session")
def tiny_yaml(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    path.write_text(TINY_YAML)
    return path


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory, tiny_yaml):
    from dialmat import config as C
    out = tmp_path_factory.mktemp("data")
    D.generate_dataset(C.dataset_config(C.load_config(tiny_yaml)), out)
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
