"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines. The multi-seed batteries share one module-scoped fixture; every
run is fully seeded, so the reported numbers reproduce bit-for-bit on a
given platform.
"""

import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gamma

from vgekit import tensor as T
from vgekit import encoder as enc
from vgekit.dataio import load_corpus, load_lexicon, load_spp
from vgekit.encoder import TrainConfig, recall_at_k, train
from vgekit.priming import (PrimingPlan, chi2_sf, ols_fit, preprocess_spp,
                            run_priming_experiment)
from vgekit.simeval import (ControlPlan, bh_correct, pair_similarities,
                            partial_correlation, pearson,
                            run_similarity_experiment)
from vgekit.textmodels import SgnsConfig, train_sgns
from vgekit.vge import extract_input_embeddings, extract_vges
from vgekit.world import WorldSpec, generate_world

N_SEEDS = 10

# Desk-scale battery configuration: the encoder keeps the paper's
# architecture (two-layer biLSTM bottleneck with self-attention) at reduced
# width so twenty training runs fit the runtime budget; the single
# training-sanity run below uses the full-size model.
BATTERY_WORLD = dict(n_synonym_pairs=10, n_sim_pairs=100, captions_per_image=6,
                     feature_noise_sd=0.02, rating_noise_sd=2.5,
                     rt_noise_sd=0.35, rt_text_effect=0.08,
                     rt_visual_effect=0.08)
ALT_VISUAL_WEIGHT = 3.0


def battery_train_config(seed: int) -> TrainConfig:
    return TrainConfig(epochs=12, batch_size=32, seed=seed, emb_dim=48,
                       lstm1_units=64, lstm2_units=32, attn_units=32)


def battery_sgns_config(seed: int) -> SgnsConfig:
    return SgnsConfig(dim=32, epochs=30, seed=seed, subsample=0.0)


@dataclass
class SeedOutcome:
    sim_alt_r: float
    sim_alt_significant: bool
    sim_null_r: float
    sim_null_significant: bool
    llr_alt_p: float
    llr_alt_beta: float
    llr_null_p: float
    footnote_vge_r: float
    footnote_input_r: float


def _evaluate_world(world, tables):
    rep = run_similarity_experiment(
        tables, [world.sim_dataset],
        ControlPlan(target="vge", controls=[("sgns",)]))
    partial = rep.partial[0]
    table = preprocess_spp(world.trials, set(world.corpus.vocab.words),
                           world.lexicon)
    prim = run_priming_experiment(
        table, tables, PrimingPlan(vge="vge", text_models=["sgns"],
                                   stacked=[("sgns",)]))
    return partial, prim.stacked[0]


@pytest.fixture(scope="module")
def battery():
    """Per-seed outcomes for the two central-claim criteria and the
    input-embedding comparison. The null world shares the corpus with the
    alternative world, so each seed trains one grounded model."""
    t0 = time.monotonic()
    outcomes = []
    for seed in range(N_SEEDS):
        alt = generate_world(WorldSpec(seed=seed,
                                       visual_weight=ALT_VISUAL_WEIGHT,
                                       **BATTERY_WORLD))
        null = generate_world(WorldSpec(seed=seed, visual_weight=0.0,
                                        **BATTERY_WORLD))
        assert [c.tokens for c in alt.corpus.captions] == \
            [c.tokens for c in null.corpus.captions]

        params, _ = train(alt.corpus, battery_train_config(seed))
        tables = {
            "vge": extract_vges(params, alt.corpus),
            "sgns": train_sgns(alt.corpus, battery_sgns_config(seed)),
        }
        inp = extract_input_embeddings(params)

        alt_partial, alt_stacked = _evaluate_world(alt, tables)
        null_partial, null_stacked = _evaluate_world(null, tables)

        kept, scores = pair_similarities(tables["vge"], alt.sim_dataset)
        vge_r, _ = pearson(scores, [r for _, _, r in kept])
        kept, scores = pair_similarities(inp, alt.sim_dataset)
        inp_r, _ = pearson(scores, [r for _, _, r in kept])

        outcomes.append(SeedOutcome(
            sim_alt_r=alt_partial.partial_r,
            sim_alt_significant=alt_partial.significant,
            sim_null_r=null_partial.partial_r,
            sim_null_significant=null_partial.significant,
            llr_alt_p=alt_stacked.p,
            llr_alt_beta=alt_stacked.beta_vge,
            llr_null_p=null_stacked.p,
            footnote_vge_r=vge_r,
            footnote_input_r=inp_r,
        ))
    return outcomes, time.monotonic() - t0


def test_gradient_correctness():
    """Autodiff vs central finite differences on every primitive and on the
    full grounded loss at shrunken dims; < 1e-4 relative, < 60 s."""
    t0 = time.monotonic()
    rng = np.random.default_rng(29)

    # Composite touching every differentiable primitive.
    a = rng.normal(size=(3, 4)) * 0.7
    b = rng.normal(size=(4, 4)) * 0.7
    bias = rng.normal(size=4)
    col = rng.normal(size=3)
    vec = rng.normal(size=4)
    mask = (rng.random((3, 4)) > 0.3).astype(float)

    def primitives(ps):
        ta, tb, tbias, tcol, tvec = ps
        m = T.add_bias(T.matmul(ta, tb), tbias)
        m = T.add_colvec(m, tcol)
        m = T.mul_colvec(T.tanh(m), T.reshape(T.sigmoid(tcol), (3,)))
        m = T.concat([m, T.relu(m)], axis=1)
        m = T.slice_cols(m, 1, 5)
        m = T.softmax(m, axis=1)
        m = T.l2_normalize(T.sadd(m, 0.5), axis=1)
        square = T.matmul(m, T.transpose(m))
        d = T.diag_part(T.smul(square, 0.5))
        picked = T.gather_rows(T.sub(m, T.smul(m, 0.25)), [2, 0, 1])
        out = T.add(T.sum_all(T.mul(picked, picked)), T.sum_all(d))
        out = T.add(out, T.masked_sum(m, mask))
        return T.add(out, T.dot(tvec, tvec))

    err_prim = T.grad_check(primitives, [a, b, bias, col, vec], eps=1e-6)
    assert err_prim < 1e-4

    # Full grounded loss: 2 captions x 3 tokens, 8-d feature stubs.
    vocab = enc.Vocabulary(["a", "dog", "runs", "cat", "sits"])
    cfg = TrainConfig(emb_dim=8, lstm1_units=6, lstm2_units=4, attn_units=5)
    params = enc.init_params(vocab, 8, cfg, np.random.default_rng(31))
    ids = [vocab.encode(["a", "dog", "runs"]), vocab.encode(["cat", "sits"])]
    idx, msk = enc._pack(ids)
    feats = rng.normal(size=(2, 8))
    names = sorted(params.tensors)

    def grounded(leaves):
        pt = dict(zip(names, leaves))
        graph = leaves[0].graph
        cap, _, _ = enc._encode_caption_batch(graph, pt, params, idx, msk)
        img = enc._encode_image_batch(graph, pt, feats)
        return enc._hinge_loss_node(graph, cap, img, 0.2, 2)

    err_loss = T.grad_check(grounded, [params.tensors[n] for n in names],
                            eps=1e-5)
    elapsed = time.monotonic() - t0
    assert err_loss < 1e-4
    assert elapsed < 60
    print(f"\nACCEPTANCE gradient-correctness: PASS "
          f"(primitives {err_prim:.2e}, grounded loss {err_loss:.2e}, "
          f"{elapsed:.1f}s)")


def test_statistics_oracles():
    """ols vs normal equations (100 instances, 1e-8); pearson/partial vs
    formula oracles (1e-10); chi2_sf vs quadrature (1e-8); bh_correct vs
    brute force on 1000 random vectors (exact); < 120 s."""
    t0 = time.monotonic()
    rng = np.random.default_rng(41)

    worst_ols = 0.0
    for _ in range(100):
        n = int(rng.integers(20, 200))
        k = int(rng.integers(2, 10))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
        y = rng.normal(size=n)
        res = ols_fit(X, y)
        oracle = np.linalg.inv(X.T @ X) @ X.T @ y
        worst_ols = max(worst_ols, float(np.abs(res.beta - oracle).max()))
    assert worst_ols < 1e-8

    worst_pearson = 0.0
    for _ in range(50):
        x = rng.normal(size=30)
        y = rng.normal(size=30)
        r, _ = pearson(x, y)
        n = 30
        num = n * (x * y).sum() - x.sum() * y.sum()
        den = math.sqrt(n * (x * x).sum() - x.sum() ** 2) * \
            math.sqrt(n * (y * y).sum() - y.sum() ** 2)
        worst_pearson = max(worst_pearson, abs(r - num / den))
    assert worst_pearson < 1e-10

    worst_partial = 0.0
    for _ in range(50):
        z = rng.normal(size=40)
        x = 0.5 * z + rng.normal(size=40)
        y = -0.3 * z + rng.normal(size=40)
        r_xy = pearson(x, y)[0]
        r_xz = pearson(x, z)[0]
        r_yz = pearson(y, z)[0]
        oracle = (r_xy - r_xz * r_yz) / math.sqrt(
            (1 - r_xz ** 2) * (1 - r_yz ** 2))
        got, _ = partial_correlation(x, y, [z])
        worst_partial = max(worst_partial, abs(got - oracle))
    assert worst_partial < 1e-10

    worst_chi2 = 0.0
    for df in (1, 2, 3, 7, 15, 30):
        for x in (0.25, 1.0, 4.0, 20.0, 75.0):
            def density(t, df=df):
                return t ** (df / 2 - 1) * math.exp(-t / 2) / \
                    (2 ** (df / 2) * gamma(df / 2))
            quad, _ = integrate.quad(density, x, np.inf, limit=200)
            worst_chi2 = max(worst_chi2, abs(chi2_sf(x, df) - quad))
    assert worst_chi2 < 1e-8

    for _ in range(1000):
        m = int(rng.integers(1, 15))
        p = rng.random(m) ** rng.uniform(0.5, 3.0)
        q = float(rng.uniform(0.01, 0.2))
        got = bh_correct(p, q)
        order = sorted(range(m), key=lambda i: p[i])
        k = 0
        for rank, i in enumerate(order, start=1):
            if p[i] <= rank * q / m:
                k = rank
        want = np.zeros(m, dtype=bool)
        if k > 0:
            want = p <= p[order[k - 1]]
        assert np.array_equal(got, want)

    elapsed = time.monotonic() - t0
    assert elapsed < 120
    print(f"\nACCEPTANCE statistics-oracles: PASS "
          f"(ols {worst_ols:.2e}, pearson {worst_pearson:.2e}, "
          f"partial {worst_partial:.2e}, chi2 {worst_chi2:.2e}, "
          f"bh exact x1000, {elapsed:.1f}s)")


def test_training_sanity():
    """Full-size encoder on a toy world (50 images, 250 captions, 40-word
    vocabulary), 10 epochs: final loss below first, caption-to-image
    recall@10 at least 5x chance; < 5 min."""
    t0 = time.monotonic()
    spec = WorldSpec(seed=0, n_concepts=30, n_topics=5, n_synonym_pairs=7,
                     n_function_words=10, n_images=50, captions_per_image=5,
                     n_targets=24)
    world = generate_world(spec)
    assert world.corpus.type_count() == 40
    assert len(world.corpus.captions) == 250

    params, logrec = train(world.corpus, TrainConfig(epochs=10, batch_size=32,
                                                     seed=0))
    recall = recall_at_k(params, world.corpus, 10)
    chance = 10 / len(world.corpus.image_ids)
    elapsed = time.monotonic() - t0

    assert logrec.epochs[-1].mean_loss < logrec.epochs[0].mean_loss
    assert recall.caption_to_image >= 5 * chance
    assert elapsed < 300
    print(f"\nACCEPTANCE training-sanity: PASS "
          f"(loss {logrec.epochs[0].mean_loss:.2f} -> "
          f"{logrec.epochs[-1].mean_loss:.2f}, recall@10 "
          f"{recall.caption_to_image:.2f} vs 5x chance {5 * chance:.2f}, "
          f"{elapsed:.0f}s)")


def test_central_claim_similarity(battery):
    """Grounded partial R^2 over the skip-gram control: positive and
    BH-significant in >= 9/10 alternative seeds, significant in <= 2/10
    null seeds; battery runtime < 30 min."""
    outcomes, elapsed = battery
    alt_hits = sum(1 for o in outcomes
                   if o.sim_alt_significant and o.sim_alt_r > 0)
    null_hits = sum(1 for o in outcomes
                    if o.sim_null_significant and o.sim_null_r > 0)
    assert elapsed < 1800
    assert alt_hits >= 9
    assert null_hits <= 2
    print(f"\nACCEPTANCE central-claim-similarity: PASS "
          f"(alternative {alt_hits}/10 significant, null {null_hits}/10, "
          f"battery {elapsed:.0f}s)")


def test_central_claim_priming(battery):
    """Adding the grounded block to the stacked regression: LLR p < .05
    with a negative grounded coefficient in >= 9/10 alternative seeds,
    rejections in <= 2/10 null seeds."""
    outcomes, _ = battery
    alt_hits = sum(1 for o in outcomes
                   if o.llr_alt_p < 0.05 and o.llr_alt_beta < 0)
    null_hits = sum(1 for o in outcomes if o.llr_null_p < 0.05)
    assert alt_hits >= 9
    assert null_hits <= 2
    print(f"\nACCEPTANCE central-claim-priming: PASS "
          f"(alternative {alt_hits}/10 reject with negative beta, "
          f"null {null_hits}/10)")


def test_footnote_input_embeddings(battery):
    """Bottleneck embeddings outscore the input-layer embeddings on the
    synthetic benchmark in >= 8/10 seeds."""
    outcomes, _ = battery
    hits = sum(1 for o in outcomes if o.footnote_vge_r > o.footnote_input_r)
    assert hits >= 8
    print(f"\nACCEPTANCE footnote-input-embeddings: PASS ({hits}/10 seeds)")


def test_full_scale_recipe():
    """Data-gated: with real corpus/priming/lexicon files present, the
    vocabulary statistics and preprocessed row count match the published
    values exactly."""
    root = os.environ.get("VGEKIT_FULLSCALE_DIR")
    if not root:
        print("\nACCEPTANCE full-scale-recipe: SKIPPED "
              "(set VGEKIT_FULLSCALE_DIR to a directory holding corpus.tsv, "
              "spp.csv, lexicon.tsv)")
        pytest.skip("full-scale data not available")
    root = Path(root)
    corpus = load_corpus(root / "corpus.tsv")
    assert corpus.type_count() == 28_415
    assert corpus.token_count() == 6_184_656
    lexicon = load_lexicon(root / "lexicon.tsv")
    trials = load_spp(root / "spp.csv")
    table = preprocess_spp(trials, set(corpus.vocab.words), lexicon)
    assert len(table) == 18_326
    print("\nACCEPTANCE full-scale-recipe: PASS "
          "(28,415 types; 6,184,656 tokens; 18,326 rows)")
