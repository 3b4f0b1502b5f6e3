import pytest

from rforge.scenegen import CorpusConfig, generate_corpus


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Twelve-scene corpus shared by the dataset and selection tests."""
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, CorpusConfig(scenes=12), seed=0)
    return root


def pytest_terminal_summary(terminalreporter):
    from _oracles import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
