import pytest

from nndwl.corpus import TARGET, build_vocabulary, featurize_source, featurize_target

from synthetic import lexicon_corpus


def featurized_lexicon(n_train, n_valid, seed=1):
    train, mapping = lexicon_corpus(n_train, seed=seed)
    valid, _ = lexicon_corpus(n_valid, seed=seed + 1)
    sv = build_vocabulary([s for s, _ in train])
    tv = build_vocabulary([t for _, t in train], side=TARGET)

    def feats(pairs):
        return [(featurize_source(s, sv), featurize_target(t, tv)) for s, t in pairs]

    return feats(train), feats(valid), sv, tv, mapping


@pytest.fixture(scope="session")
def small_lexicon():
    return featurized_lexicon(200, 40)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
