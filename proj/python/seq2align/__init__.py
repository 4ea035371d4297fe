"""Python front end to the seq2align C++ library."""

from ._core import (
    BOS,
    EOS,
    PAD,
    UNK,
    Corpus,
    DecodeResult,
    EpochRecord,
    ExperimentConfig,
    Model,
    ModelShape,
    TrainConfig,
    Vocabulary,
    bleu,
    cap_repetitions,
    decode,
    entropy,
    evaluate,
    generate_synthetic,
    load_corpus,
    neg_log_prob,
    probe,
    r2_fit,
    run_experiment,
    shuffle_targets,
    target_permutation,
    train,
)


def decode_words(model, corpus, **kwargs):
    """Decodes every source sentence of corpus and returns word lists."""
    results = decode(model, corpus.source_ids(), **kwargs)
    return [corpus.target_vocab.decode(r.tokens) for r in results]


__all__ = [name for name in dir() if not name.startswith("_")]
