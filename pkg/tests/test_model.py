import numpy as np
import pytest

import lexner.autodiff as ad
from lexner import checkpoint
from lexner.autodiff import ConfigError, Tape, Tensor
from lexner.corpus import Sentence, Vocab
from lexner.lexicon import Lexicon
from lexner.model import (Model, ModelConfig, SPARSE_TABLES, TrainSettings,
                          attend, classify, span_labels, train_model)
from lexner.optim import Adam
from lexner.synth import make_corpus

SMALL = dict(d_char=8, d_seg=4, d_pos=4, d_lex=10, d_mod=6, k_cut=1,
             max_entity_len=4, char_encoder="baseline",
             fragment_encoder="bow", head_hidden=16, head_layers=1)


def tiny_world(seed=0, **over):
    """A small model over a 2-sentence corpus with a 3-word lexicon."""
    s1 = Sentence(list("abcu"), ["B", "M", "E", "S"], ["NN"] * 3 + ["X"],
                  entities={(0, 2, "PER")})
    s2 = Sentence(list("vabd"), ["S", "B", "E", "S"], ["X", "NN", "NN", "X"],
                  entities={(1, 2, "ORG")})
    lex = Lexicon(["abc", "ab", "bc"])
    vocab = Vocab.build([s1, s2], lex.words)
    cfg = ModelConfig(**{**SMALL, **over})
    model = Model.build(cfg, vocab, np.random.default_rng(seed))
    return model, [s1, s2], lex


class TestModelConfig:
    def test_defaults_validate(self):
        ModelConfig().validate()

    def test_bad_encoder(self):
        with pytest.raises(ConfigError):
            ModelConfig(char_encoder="cnn").validate()

    def test_bad_gamma(self):
        with pytest.raises(ConfigError):
            ModelConfig(gamma=-1.0).validate()

    def test_derived_dims(self):
        cfg = ModelConfig()
        assert cfg.d_w == 100
        assert cfg.d_t == 2 * cfg.char_hidden
        assert cfg.d_m == cfg.d_lex + cfg.d_mod
        assert cfg.n_mod == 2 * cfg.k_cut + 4
        assert ModelConfig(char_encoder="baseline").d_t == 100


class TestAttend:
    def test_single_row_memory_returns_row(self):
        rng = np.random.default_rng(0)
        f = Tensor(rng.normal(size=4))
        mem = Tensor(rng.normal(size=(1, 3)))
        w = Tensor(rng.normal(size=(4, 3)))
        with Tape():
            ctx, weights = attend(f, mem, w)
        assert np.allclose(weights.values, [1.0])
        assert np.allclose(ctx.values, mem.values[0])

    def test_zero_bilinear_gives_column_mean(self):
        rng = np.random.default_rng(1)
        f = Tensor(rng.normal(size=4))
        mem = Tensor(rng.normal(size=(5, 3)))
        with Tape():
            ctx, weights = attend(f, mem, Tensor(np.zeros((4, 3))))
        assert np.allclose(weights.values, 0.2)
        assert np.allclose(ctx.values, mem.values.mean(axis=0))

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            f = Tensor(rng.normal(size=6))
            mem = Tensor(rng.normal(size=(int(rng.integers(1, 9)), 4)))
            w = Tensor(rng.normal(size=(6, 4)))
            with Tape():
                _, weights = attend(f, mem, w)
            assert np.isclose(weights.values.sum(), 1.0)
            assert np.all(weights.values >= 0.0)


class TestClassify:
    def test_output_is_distribution(self):
        model, _, _ = tiny_world()
        cfg = model.config
        rng = np.random.default_rng(3)
        f = Tensor(rng.normal(size=cfg.d_f))
        mem = Tensor(rng.normal(size=(4, cfg.d_m)))
        with Tape():
            probs = classify(model, f, mem)
        assert probs.shape == (cfg.n_types,)
        assert np.isclose(probs.values.sum(), 1.0)
        assert np.all(probs.values > 0.0)

    def test_matches_batched_path(self):
        model, sents, lex = tiny_world()
        sent = sents[0]
        model.vocab.encode(sent)
        spans = [(0, 2), (1, 1)]
        layouts = model.memory_layouts(sent, lex, spans)
        with Tape():
            probs, _ = model.score_spans(sent, layouts, spans)
        assert probs.shape == (2, model.config.n_types)
        assert np.allclose(probs.values.sum(axis=1), 1.0)


class TestFocalValues:
    def run(self, p_t, gamma, alpha=1.0):
        probs = Tensor(np.array([p_t, 1.0 - p_t]))
        with Tape():
            loss = ad.focal_loss(probs, 0, Tensor(np.array([alpha, alpha])),
                                 gamma)
        return float(loss.values)

    def test_half_gamma0_is_ln2(self):
        assert np.isclose(self.run(0.5, 0.0), np.log(2.0))

    def test_half_gamma2_quarter_ln2(self):
        assert np.isclose(self.run(0.5, 2.0), 0.25 * np.log(2.0))

    def test_alpha_scales(self):
        assert np.isclose(self.run(0.5, 0.0, alpha=3.0), 3.0 * np.log(2.0))

    def test_monotone_decreasing_in_pt(self):
        for gamma in (0.0, 0.5, 1.0, 2.0):
            losses = [self.run(p, gamma) for p in np.linspace(0.05, 0.95, 19)]
            assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_downweights_easy_examples(self):
        # relative to gamma=0, the modulating factor shrinks confident
        # examples far more than uncertain ones
        easy = self.run(0.9, 2.0) / self.run(0.9, 0.0)
        hard = self.run(0.1, 2.0) / self.run(0.1, 0.0)
        assert easy < hard


class TestSpanLabels:
    def test_gold_and_none(self):
        model, sents, _ = tiny_world()
        sent = sents[0]
        spans = [(0, 2), (0, 1), (3, 3)]
        labels = span_labels(sent, spans, model.vocab)
        assert labels[0] == model.vocab.types.id("PER")
        assert labels[1] == model.vocab.none_id
        assert labels[2] == model.vocab.none_id


class TestTraining:
    def settings(self, **over):
        base = dict(lr=1e-2, dropout=0.0, epochs=3, batch_size=2,
                    eval_train=True, seed=0)
        base.update(over)
        return TrainSettings(**base)

    def test_single_sentence_overfit(self):
        model, sents, lex = tiny_world(learn_alpha=False, gamma=0.0)
        from lexner.model import _prepare
        prepared = _prepare(model, sents[0], lex)
        opt = Adam(model.trainable(), lr=1e-2, sparse=SPARSE_TABLES)
        sent, spans, layouts, targets = prepared
        loss_val = None
        for _ in range(200):
            with Tape() as tape:
                probs, _ = model.score_spans(sent, layouts, spans)
                loss = ad.scale(
                    ad.focal_loss_rows(probs, targets, model.alpha(), 0.0),
                    1.0 / len(spans))
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            loss_val = float(loss.values)
        assert loss_val < 1e-2, loss_val

    def test_gamma0_alpha1_equals_cross_entropy(self):
        # per-step losses of the focal objective with gamma=0, alpha=1 match
        # an explicit cross-entropy computation to within accumulation noise
        model, sents, lex = tiny_world(learn_alpha=False, gamma=0.0)
        from lexner.model import _prepare
        prepared = [_prepare(model, s, lex) for s in sents]
        for sent, spans, layouts, targets in prepared:
            with Tape():
                probs, _ = model.score_spans(sent, layouts, spans)
                focal = ad.focal_loss_rows(probs, targets, model.alpha(), 0.0)
            ce = -np.sum(np.log(probs.values[np.arange(len(spans)), targets]))
            assert np.isclose(float(focal.values), ce, atol=1e-9)

    def test_frozen_lexicon_embeddings_constant(self):
        model, sents, lex = tiny_world()
        before = model.params["emb_lex"].values.copy()
        train_model(model, sents, [], lex, self.settings(freeze_lex=True))
        # train_model restores nothing; current params reflect last step
        assert np.array_equal(model.params["emb_lex"].values, before)

    def test_unfrozen_lexicon_embeddings_move(self):
        model, sents, lex = tiny_world()
        before = model.params["emb_lex"].values.copy()
        train_model(model, sents, [], lex, self.settings(freeze_lex=False))
        assert not np.array_equal(model.params["emb_lex"].values, before)

    def test_epoch_log_shape(self):
        model, sents, lex = tiny_world()
        _, rows = train_model(model, sents, [], lex, self.settings(epochs=2))
        assert [r.epoch for r in rows] == [1, 2]
        assert all(r.split == "train" for r in rows)
        assert all(np.isfinite(r.loss) for r in rows)

    def test_dev_split_monitored(self):
        model, sents, lex = tiny_world()
        _, rows = train_model(model, [sents[0]], [sents[1]], lex,
                              self.settings(epochs=2, eval_train=False))
        assert all(r.split == "dev" for r in rows)

    def test_same_seed_same_result(self):
        results = []
        for _ in range(2):
            model, sents, lex = tiny_world(seed=5)
            snap, rows = train_model(model, sents, [], lex, self.settings())
            results.append((snap, [r.loss for r in rows]))
        (snap_a, losses_a), (snap_b, losses_b) = results
        assert losses_a == losses_b
        for k in snap_a:
            assert np.array_equal(snap_a[k], snap_b[k])


class TestSnapshotRestore:
    def test_roundtrip(self):
        model, sents, lex = tiny_world()
        snap = model.snapshot()
        for v in model.params.values():
            v.values += 1.0
        model.restore(snap)
        for k, v in model.params.items():
            assert np.array_equal(v.values, snap[k])


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        model, sents, lex = tiny_world()
        path = str(tmp_path / "m.ckpt")
        checkpoint.save(path, model, extra={"note": "x"})
        loaded, extra = checkpoint.load(path)
        assert extra["note"] == "x"
        assert loaded.config == model.config
        assert loaded.vocab.types.symbols == model.vocab.types.symbols
        for k, v in model.params.items():
            assert np.array_equal(loaded.params[k].values, v.values)

    def test_file_bytes_deterministic(self, tmp_path):
        model, _, _ = tiny_world(seed=2)
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        checkpoint.save(p1, model)
        checkpoint.save(p2, model)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_structure_check(self, tmp_path):
        model, _, _ = tiny_world()
        path = str(tmp_path / "m.ckpt")
        checkpoint.save(path, model)
        loaded, _ = checkpoint.load(path)
        want = ModelConfig(**{**SMALL, "d_lex": 99})
        with pytest.raises(ConfigError):
            checkpoint.check_structure(want, loaded.config, {"d_lex"})
        # unmentioned fields are taken from the checkpoint without complaint
        checkpoint.check_structure(want, loaded.config, set())

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"not a checkpoint\n")
        with pytest.raises(ConfigError):
            checkpoint.load(str(p))


class TestSyntheticCorpus:
    def test_shapes_and_types(self):
        train, dev, lex_words = make_corpus(0, n_train=20, n_dev=5)
        assert len(train) == 20 and len(dev) == 5
        for s in train + dev:
            assert s.entities
            for i, j, t in s.entities:
                assert j - i + 1 == 4
                assert t in ("PER", "ORG", "LOC")
        assert len(lex_words) >= 20

    def test_reversed_suffixes_get_different_types(self):
        # type is carried by the suffix word, and a suffix's reversal maps to
        # a different type: order-insensitive encoders cannot separate them
        from lexner.synth import build_wordlists
        rng = np.random.default_rng(0)
        _, suffixes, suffix_type = build_wordlists(rng)
        flipped = 0
        for s in suffixes:
            if s[::-1] in suffix_type and suffix_type[s[::-1]] != suffix_type[s]:
                flipped += 1
        assert flipped == len(suffixes)

    def test_deterministic(self):
        a = make_corpus(3, n_train=5, n_dev=2)
        b = make_corpus(3, n_train=5, n_dev=2)
        assert [s.chars for s in a[0]] == [s.chars for s in b[0]]
        assert a[2] == b[2]
