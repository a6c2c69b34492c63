import pytest

from legalmt.corpus import make_batches
from legalmt.model import TransformerModel
from legalmt.subword import train_subword
from legalmt.toy import copy_corpus, reduced_config
from legalmt.train import TrainConfig, evaluate_loss, train

TOY_EPOCHS = 300


@pytest.fixture(scope="session")
def toy_corpus():
    return copy_corpus()


@pytest.fixture(scope="session")
def toy_subword(toy_corpus):
    return train_subword(toy_corpus.sources + toy_corpus.targets, 200)


def toy_train_config(**kw):
    base = dict(learning_rate=2e-3, schedule="constant", max_epochs=TOY_EPOCHS, max_len=64, batch_size=32, seed=0)
    base.update(kw)
    return TrainConfig.from_preset("scratch", **base)


@pytest.fixture(scope="session")
def trained_toy(toy_corpus, toy_subword):
    """The copy-task model after the full toy run, plus its history and initial loss."""
    model = TransformerModel(reduced_config(toy_subword.vocab_size), seed=0)
    batches = make_batches(toy_corpus, toy_subword, 32, 64)
    initial = evaluate_loss(model, batches, label_smoothing=0.0)
    result = train(model, toy_corpus, toy_subword, toy_train_config())
    result.model.eval()
    return result, initial
