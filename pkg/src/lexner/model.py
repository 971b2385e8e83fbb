"""Span classifier: fragment encoding + memory attention + focal loss.

Each candidate span is encoded, attends over its lexicon memory with a
scaled bilinear score, and the concatenated representation goes through a
feed-forward head to a distribution over entity types plus NONE. Training
minimizes focal loss with a per-class positive weight vector, optionally
learned (stored as exponentials of free parameters).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import encoders, lexicon as lx
from .autodiff import ConfigError, Tensor
from .corpus import Sentence, Vocab
from .optim import Adam, DivergenceError, clip_global_norm

SPARSE_TABLES = frozenset({"emb_char", "emb_seg", "emb_pos", "emb_lex", "emb_mod"})


@dataclass
class ModelConfig:
    """Structural hyperparameters baked into a checkpoint."""

    d_char: int = 50
    d_seg: int = 25
    d_pos: int = 25
    d_lex: int = 50
    d_mod: int = 20
    k_cut: int = 2              # bucket cutoff K
    bucket_cap: int = 8
    max_entity_len: int = 10
    char_encoder: str = "birnn"     # baseline | birnn
    fragment_encoder: str = "fofe"  # bow | fofe | birnn
    char_hidden: int = 128
    char_layers: int = 2
    frag_hidden: int = 128
    head_hidden: int = 256
    head_layers: int = 2
    fofe_alpha: float = 0.5
    gamma: float = 2.0
    learn_alpha: bool = True
    # vocabulary sizes, filled in when the model is built
    n_chars: int = 0
    n_seg: int = 4
    n_pos: int = 0
    n_types: int = 0
    n_lex: int = 0

    def validate(self):
        if self.char_encoder not in ("baseline", "birnn"):
            raise ConfigError(f"unknown character encoder {self.char_encoder!r}")
        if self.fragment_encoder not in ("bow", "fofe", "birnn"):
            raise ConfigError(f"unknown fragment encoder {self.fragment_encoder!r}")
        if not 0.0 < self.fofe_alpha < 1.0:
            raise ConfigError(f"fofe_alpha must lie in (0, 1), got {self.fofe_alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.k_cut < 0 or self.max_entity_len < 1:
            raise ConfigError("k_cut must be >= 0 and max_entity_len >= 1")

    @property
    def d_w(self) -> int:
        return self.d_char + self.d_seg + self.d_pos

    @property
    def d_t(self) -> int:
        return 2 * self.char_hidden if self.char_encoder == "birnn" else self.d_w

    @property
    def d_f(self) -> int:
        return 2 * self.frag_hidden if self.fragment_encoder == "birnn" else self.d_t

    @property
    def d_m(self) -> int:
        return self.d_lex + self.d_mod

    @property
    def n_mod(self) -> int:
        return lx.bucket_count(self.k_cut)


def attend(f: Tensor, memory: Tensor, w_attn: Tensor) -> tuple[Tensor, Tensor]:
    """Scaled bilinear attention of a fragment vector over its memory.

    Returns the attended context vector and the weight vector (a tape node;
    its values sum to 1).
    """
    d_m = memory.shape[1]
    scores = ad.scale(ad.matvec(memory, ad.vecmat(f, w_attn)), 1.0 / math.sqrt(d_m))
    weights = ad.softmax(scores)
    return ad.vecmat(weights, memory), weights


class Model:
    """Parameter container plus the forward pass over one sentence."""

    def __init__(self, config: ModelConfig, vocab: Vocab,
                 params: dict[str, Tensor] | None = None):
        config.validate()
        self.config = config
        self.vocab = vocab
        self.params = params if params is not None else {}
        self._char_cells: list[tuple[encoders.LSTMCell, encoders.LSTMCell]] = []
        self._frag_cells: tuple[encoders.LSTMCell, encoders.LSTMCell] | None = None
        if params is None:
            raise ConfigError("use Model.build or checkpoint loading")
        self._bind_cells()

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, config: ModelConfig, vocab: Vocab, rng: np.random.Generator,
              lex_embeddings: np.ndarray | None = None,
              char_embeddings: np.ndarray | None = None) -> "Model":
        config.n_chars = len(vocab.chars)
        config.n_seg = len(vocab.segs)
        config.n_pos = len(vocab.pos)
        config.n_types = len(vocab.types)
        config.n_lex = len(vocab.lex)
        config.validate()
        p: dict[str, Tensor] = {}

        def table(name, rows, dim, preset=None):
            if preset is not None:
                if preset.shape != (rows, dim):
                    raise ConfigError(
                        f"{name}: pretrained shape {preset.shape} != ({rows}, {dim})")
                p[name] = ad.parameter(preset)
            else:
                p[name] = ad.parameter(rng.uniform(-0.1, 0.1, (rows, dim)))

        table("emb_char", config.n_chars, config.d_char, char_embeddings)
        table("emb_seg", config.n_seg, config.d_seg)
        table("emb_pos", config.n_pos, config.d_pos)
        table("emb_lex", config.n_lex, config.d_lex, lex_embeddings)
        table("emb_mod", config.n_mod, config.d_mod)
        table("null_rows", config.n_mod, config.d_m)

        def register_cell(prefix, d_in, hidden):
            cell = encoders.lstm_init(d_in, hidden, rng)
            p[f"{prefix}_wx"], p[f"{prefix}_wh"], p[f"{prefix}_b"] = cell.wx, cell.wh, cell.b

        if config.char_encoder == "birnn":
            d_in = config.d_w
            for layer in range(config.char_layers):
                register_cell(f"char_l{layer}_f", d_in, config.char_hidden)
                register_cell(f"char_l{layer}_b", d_in, config.char_hidden)
                d_in = 2 * config.char_hidden
        if config.fragment_encoder == "birnn":
            register_cell("frag_f", config.d_t, config.frag_hidden)
            register_cell("frag_b", config.d_t, config.frag_hidden)

        table("attn_w", config.d_f, config.d_m)
        d_in = config.d_f + config.d_m
        for layer in range(config.head_layers):
            table(f"head_w{layer}", config.head_hidden, d_in)
            p[f"head_b{layer}"] = ad.parameter(np.zeros(config.head_hidden))
            d_in = config.head_hidden
        table("head_out_w", config.n_types, d_in)
        p["head_out_b"] = ad.parameter(np.zeros(config.n_types))
        p["alpha_log"] = ad.parameter(np.zeros(config.n_types))
        return cls(config, vocab, p)

    def _bind_cells(self):
        def cell(prefix):
            return encoders.LSTMCell(self.params[f"{prefix}_wx"],
                                     self.params[f"{prefix}_wh"],
                                     self.params[f"{prefix}_b"])
        if self.config.char_encoder == "birnn":
            self._char_cells = [(cell(f"char_l{l}_f"), cell(f"char_l{l}_b"))
                                for l in range(self.config.char_layers)]
        if self.config.fragment_encoder == "birnn":
            self._frag_cells = (cell("frag_f"), cell("frag_b"))

    def trainable(self, freeze_lex: bool = True) -> dict[str, Tensor]:
        skip = {"emb_lex"} if freeze_lex else set()
        return {k: v for k, v in self.params.items() if k not in skip}

    def alpha(self) -> Tensor:
        if self.config.learn_alpha:
            return ad.exp(self.params["alpha_log"])
        return ad.constant(np.ones(self.config.n_types))

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for k, v in self.params.items():
            v.values[...] = snap[k]

    # -- forward -----------------------------------------------------------

    def memory_layouts(self, sent: Sentence, lex: lx.Lexicon | None,
                       spans: list[tuple[int, int]]) -> list[lx.MemoryLayout]:
        """Per-span match layouts; with no lexicon every bucket is null."""
        cfg = self.config
        unk = self.vocab.lex.id("<unk>")
        layouts = []
        for i, j in spans:
            matches = ([] if lex is None
                       else lx.match_fragment(lex, sent.text[i:j + 1]))
            layouts.append(lx.bucketize(
                matches, cfg.k_cut, lex if lex is not None else _EMPTY_LEX,
                lambda w: self.vocab.lex.id(w, unk), cap=cfg.bucket_cap))
        return layouts

    def score_spans(self, sent: Sentence, layouts: list[lx.MemoryLayout],
                    spans: list[tuple[int, int]],
                    dropout_rate: float = 0.0,
                    rng: np.random.Generator | None = None,
                    training: bool = False,
                    want_attention: bool = False):
        """Probability matrix (n_spans x n_types) for the given spans.

        Returns (probs Tensor, attention list); attention entries are
        (weights array, row labels) when requested, else None.
        """
        cfg = self.config
        p = self.params
        w = encoders.char_feature_vectors(
            sent.char_ids, sent.seg_ids, sent.pos_ids,
            p["emb_char"], p["emb_seg"], p["emb_pos"],
            dropout_rate=dropout_rate, rng=rng, training=training)
        t = encoders.encode_characters(w, cfg.char_encoder, self._char_cells)
        if cfg.fragment_encoder == "bow":
            frags = encoders.encode_fragments_bow(t, spans)
        elif cfg.fragment_encoder == "fofe":
            frags = encoders.encode_fragments_fofe(t, spans, cfg.fofe_alpha)
        else:
            frags = encoders.encode_fragments_birnn(t, spans, *self._frag_cells)
        rows = []
        attn_dump = []
        for span, layout in zip(spans, layouts):
            memory = lx.assemble_memory(layout, p["emb_lex"], p["emb_mod"],
                                        p["null_rows"])
            ctx, weights = attend(frags[span], memory, p["attn_w"])
            rows.append(ad.concat([frags[span], ctx]))
            attn_dump.append((weights.values.copy(), layout.row_labels(cfg.k_cut))
                             if want_attention else None)
        r = ad.stack_rows(rows)
        for layer in range(cfg.head_layers):
            r = ad.tanh(ad.linear(r, p[f"head_w{layer}"], p[f"head_b{layer}"]))
        logits = ad.linear(r, p["head_out_w"], p["head_out_b"])
        return ad.softmax_rows(logits), attn_dump


class _NoLexicon:
    def freq(self, word):
        return 0.0


_EMPTY_LEX = _NoLexicon()


def classify(model: Model, f: Tensor, memory: Tensor) -> Tensor:
    """Single-fragment head: f ++ attention context -> type distribution."""
    ctx, _ = attend(f, memory, model.params["attn_w"])
    h = ad.concat([f, ctx])
    for layer in range(model.config.head_layers):
        h = ad.tanh(ad.add(ad.matvec(model.params[f"head_w{layer}"], h),
                           model.params[f"head_b{layer}"]))
    logits = ad.add(ad.matvec(model.params["head_out_w"], h),
                    model.params["head_out_b"])
    return ad.softmax(logits)


def span_labels(sent: Sentence, spans: list[tuple[int, int]],
                vocab: Vocab) -> np.ndarray:
    """Gold type id per span, NONE where the span is not a gold entity."""
    gold = {(s, e): vocab.types.id(t) for s, e, t in sent.entities}
    none = vocab.none_id
    return np.array([gold.get(span, none) for span in spans], dtype=np.intp)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainSettings:
    """Run-level knobs that do not change the model's structure."""

    lr: float = 1e-3
    weight_decay: float = 1e-7
    dropout: float = 0.3
    batch_size: int = 16
    clip_norm: float = 5.0
    epochs: int = 30
    freeze_lex: bool = True
    use_lexicon: bool = True
    rho: float = 0.25
    nested: bool = False
    early_stop_f1: float | None = None
    eval_train: bool = False
    seed: int = 1


@dataclass
class EpochRow:
    epoch: int
    split: str
    precision: float
    recall: float
    f1: float
    loss: float


def train_model(model: Model, train_sents: list[Sentence],
                dev_sents: list[Sentence], lex: lx.Lexicon | None,
                settings: TrainSettings,
                log_fn=None) -> tuple[dict[str, np.ndarray], list[EpochRow]]:
    """Minibatch Adam training; returns the best snapshot and the epoch log.

    The best checkpoint is chosen by dev F1 (train F1 when no dev split is
    given). Embedding tables use the sparse update mode.
    """
    from . import decode  # local import to avoid a cycle at module load

    cfg = model.config
    rng = np.random.default_rng(settings.seed)
    active_lex = lex if settings.use_lexicon else None
    prepared = [_prepare(model, s, active_lex) for s in train_sents]
    dev_prepared = [_prepare(model, s, active_lex) for s in dev_sents]
    opt = Adam(model.trainable(settings.freeze_lex), lr=settings.lr,
               weight_decay=settings.weight_decay,
               sparse=SPARSE_TABLES)
    rows: list[EpochRow] = []
    best_f1, best_snap = -1.0, model.snapshot()
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(prepared))
        epoch_loss, epoch_frags = 0.0, 0
        for b0 in range(0, len(order), settings.batch_size):
            batch = [prepared[k] for k in order[b0:b0 + settings.batch_size]]
            with ad.Tape() as tape:
                alpha = model.alpha()
                total, n_frags = None, 0
                for sent, spans, layouts, targets in batch:
                    probs, _ = model.score_spans(
                        sent, layouts, spans, dropout_rate=settings.dropout,
                        rng=rng, training=True)
                    loss_s = ad.focal_loss_rows(probs, targets, alpha, cfg.gamma)
                    total = loss_s if total is None else ad.add(total, loss_s)
                    n_frags += len(spans)
                loss = ad.scale(total, 1.0 / n_frags)
                if not np.isfinite(loss.values):
                    raise DivergenceError(
                        f"non-finite loss in epoch {epoch}, batch {b0 // settings.batch_size}")
                tape.backward(loss)
            clip_global_norm(opt.params, settings.clip_norm)
            opt.step()
            opt.zero_grad()
            epoch_loss += float(loss.values) * n_frags
            epoch_frags += n_frags
        mean_loss = epoch_loss / max(epoch_frags, 1)

        def eval_split(name, items):
            preds = [decode.resolve(
                decode.filter_threshold(_score(model, it), settings.rho),
                settings.nested) for it in items]
            golds = [it[0].entities for it in items]
            p, r, f1 = decode.evaluate(
                [{(s.start, s.end, s.type) for s in ps} for ps in preds], golds)
            rows.append(EpochRow(epoch, name, p, r, f1, mean_loss))
            return f1

        monitored = None
        if settings.eval_train or not dev_prepared:
            monitored = eval_split("train", prepared)
        if dev_prepared:
            monitored = eval_split("dev", dev_prepared)
        if log_fn:
            log_fn(rows[-1])
        # ties go to the later epoch so a flat F1 curve still yields the
        # most-trained weights
        if monitored is not None and monitored >= best_f1:
            best_f1, best_snap = monitored, model.snapshot()
        if settings.early_stop_f1 is not None and monitored is not None \
                and monitored >= settings.early_stop_f1:
            break
    return best_snap, rows


def _prepare(model: Model, sent: Sentence, lex):
    if sent.char_ids is None:
        model.vocab.encode(sent)
    spans = encoders.enumerate_fragments(len(sent), model.config.max_entity_len)
    layouts = model.memory_layouts(sent, lex, spans)
    targets = span_labels(sent, spans, model.vocab)
    return sent, spans, layouts, targets


def _score(model: Model, prepared, want_attention: bool = False):
    """Inference pass producing decode-ready scored spans."""
    from .decode import ScoredSpan

    sent, spans, layouts, _ = prepared
    probs, attn = model.score_spans(sent, layouts, spans,
                                    want_attention=want_attention)
    none = model.vocab.none_id
    scored = []
    for row, (i, j) in enumerate(spans):
        dist = probs.values[row]
        best = int(dist.argmax())
        scored.append(ScoredSpan(
            start=i, end=j, type=model.vocab.types.sym(best),
            prob=float(dist[best]), is_none=(best == none),
            attention=attn[row] if want_attention else None))
    return scored
