import pytest

from maskveil import (aggregate_scales, build_focus_bank, derive_seed, derive_template,
                      fit_feature_regression, layout_by_name, load_corpus, make_corpus,
                      train_recognizer, NoiseSource, CORPUS)

SMALL_SEED = 11


@pytest.fixture(scope="session")
def small_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus") / "small"
    make_corpus(d, n_identities=6, images_per_identity=4, seed=SMALL_SEED)
    return d


@pytest.fixture(scope="session")
def small_items(small_dir):
    return load_corpus(small_dir)


@pytest.fixture(scope="session")
def layout5():
    return layout_by_name("5pt")


@pytest.fixture(scope="session")
def layout17():
    return layout_by_name("17pt")


@pytest.fixture(scope="session")
def small_model(small_items, layout5):
    samples = [(it.identity, it.image, it.landmarks.subset(layout5.point_labels))
               for it in small_items]
    return train_recognizer(samples, layout5, k=12)


@pytest.fixture(scope="session")
def small_template(small_items, layout5):
    phi = aggregate_scales([it.landmarks for it in small_items])
    reg = fit_feature_regression(
        [(it.landmarks.points.reshape(-1),
          it.landmarks.subset(layout5.point_labels).points.reshape(-1))
         for it in small_items], 0.1)
    return derive_template(reg, layout5, phi, derive_seed(SMALL_SEED, "template"), 1)


@pytest.fixture(scope="session")
def small_source(small_items):
    bank = build_focus_bank([(it.image, it.landmarks) for it in small_items],
                            derive_seed(SMALL_SEED, "bank"))
    return NoiseSource(CORPUS, bank=bank, seed=derive_seed(SMALL_SEED, "noise"))
