"""Acceptance checklist for the package: ten checks, one verdict line each.

Run with plain pytest; every test prints `[acceptance N] PASS/FAIL: ...`
directly to the terminal (bypassing capture) so the checklist is visible in
normal runs. Checks 5-10 read the session-scoped shipped-config benchmark.
"""

import json
import time
from pathlib import Path

import numpy as np

from switchlm import backbone as bb
from switchlm.head import (
    ExpertInfo,
    ExpertTokenHead,
    extended_logits,
    head_loss_and_grad,
    init_head,
    load_head,
    save_head,
    train_head,
)
from switchlm.experiment import (
    _load_models,
    _load_query_sets,
    _test_sets,
    derive_seed,
    expert_specs,
    stage_train_head,
)
from switchlm.optim import TrainConfig
from switchlm.orchestrator import Limits, generate, trace_record
from switchlm.vocab import expert_token_string
from switchlm.wire import RemoteBackend, serve_backend

GOLDEN = Path(__file__).parent / "golden"


def _verdict(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"acceptance {number}: {detail}"


# -- 1: analytic gradient ------------------------------------------------------------


def test_extended_softmax_gradient_is_analytic(capsys):
    rng = np.random.default_rng(0)
    step = 1e-4
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(50):
        e, d, b, v = 3, 5, 4, 11
        w_e = rng.normal(scale=0.5, size=(e, d))
        h = rng.normal(size=(b, d))
        zw = rng.normal(size=(b, v))
        targets = rng.integers(0, v + e, size=b)
        targets[rng.integers(0, b)] = v + rng.integers(0, e)
        _, grad = head_loss_and_grad(w_e, h, zw, targets)
        fd = np.zeros_like(w_e)
        for i in range(e):
            for j in range(d):
                up, down = w_e.copy(), w_e.copy()
                up[i, j] += step
                down[i, j] -= step
                lu, _ = head_loss_and_grad(up, h, zw, targets)
                ld, _ = head_loss_and_grad(down, h, zw, targets)
                fd[i, j] = (lu - ld) / (2 * step)
        worst = max(worst, np.abs(grad - fd).max() / np.abs(fd).max())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 10.0
    _verdict(capsys, 1, ok,
             f"gradient vs central differences: max relative error {worst:.2e} "
             f"on 50 instances in {elapsed:.1f}s (need <=1e-5, <10s)")


# -- 2: word logits survive any head ----------------------------------------------------


def test_attaching_heads_preserves_word_logits(capsys, tiny_model):
    rng = np.random.default_rng(1)
    v = tiny_model.vocab.size
    worst_ratio = 0.0
    t0 = time.perf_counter()
    for block in range(10):  # a fresh random head per 100 contexts
        head = init_head(tiny_model, [(f"e{block}{k}", "stub") for k in range(3)])
        head.w_e[:] = rng.normal(scale=2.0, size=head.w_e.shape).astype(np.float32)
        for _ in range(100):
            ctx = rng.integers(0, v, size=int(rng.integers(1, 13))).tolist()
            h = bb.hidden_state(tiny_model, ctx)
            zw = bb.word_logits(tiny_model, h)
            z = extended_logits(head, tiny_model, h)
            if z[:v].tobytes() != zw.tobytes():
                _verdict(capsys, 2, False, "word logits changed bits under an attached head")
            pz = np.exp(z.astype(np.float64) - z.max())
            pw = np.exp(zw.astype(np.float64) - zw.max())
            r = (pz[:v] / pz.sum()) / (pw / pw.sum())
            worst_ratio = max(worst_ratio, float(r.max() / r.min() - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_ratio <= 1e-12 and elapsed < 5.0
    _verdict(capsys, 2, ok,
             f"word logits bit-identical and probability ratios within "
             f"{worst_ratio:.2e} relative on 1,000 contexts in {elapsed:.1f}s "
             f"(need <=1e-12, <5s)")


# -- 3: backbone stays frozen ----------------------------------------------------------


def test_head_training_leaves_backbone_frozen(capsys, benchmark_run):
    cfg, wd = benchmark_run["cfg"], benchmark_run["wd"]
    _, meta, _ = _load_models(cfg, wd)
    sets = _load_query_sets(wd)
    before = bb.fingerprint(meta)
    tensors_before = [t.tobytes() for t in (meta.emb, meta.wh, meta.bh, meta.wv, meta.bv)]
    head_cfg = TrainConfig(cfg.head_train.learning_rate, cfg.head_train.weight_decay,
                           cfg.head_train.epochs, cfg.head_train.batch_size,
                           derive_seed(cfg.seed, "head-train"))
    train_head(init_head(meta, expert_specs(wd)), meta, sets, head_cfg)
    after = bb.fingerprint(meta)
    tensors_after = [t.tobytes() for t in (meta.emb, meta.wh, meta.bh, meta.wv, meta.bv)]
    ok = before == after and tensors_before == tensors_after
    _verdict(capsys, 3, ok,
             f"backbone hash before/after head training: {before[:12]}.. == {after[:12]}.. "
             f"and every parameter tensor is byte-identical")


# -- 4: golden trace -------------------------------------------------------------------


class _ScriptedMeta:
    """Emits '4', then '2', then lights up the expert row."""

    name = "scripted-meta"

    def __init__(self, vocab):
        self.vocab = vocab

    def hidden_state(self, context):
        on = context.endswith("42")
        return np.array([1.0 if on else 0.0, 0.0, 0.0, 0.0], dtype=np.float32)

    def word_logits(self, context):
        z = np.zeros(self.vocab.size, dtype=np.float32)
        if context.endswith("<sep>"):
            z[int(self.vocab.encode("4")[0])] = 5.0
        elif context.endswith("4"):
            z[int(self.vocab.encode("2")[0])] = 5.0
        return z


class _ScriptedExpert:
    name = "digits"

    def generate(self, context, max_new_tokens):
        return "37"[:max_new_tokens]


def test_traced_switch_matches_golden_file(capsys, vocab):
    head = ExpertTokenHead(
        w_e=np.asarray([[10.0, 0.0, 0.0, 0.0]], dtype=np.float32),
        experts=(ExpertInfo("digits", expert_token_string(0), "stub:digits"),),
        backbone_fingerprint="stub",
    )
    result = generate("q", _ScriptedMeta(vocab), head, [_ScriptedExpert()], vocab,
                      Limits(max_new_tokens=8))
    rendered = json.dumps(trace_record(result, include_latency=False),
                          indent=2, sort_keys=True) + "\n"
    golden = (GOLDEN / "trace_switch.json").read_bytes()
    ok = rendered.encode() == golden
    _verdict(capsys, 4, ok,
             "scripted decoding session reproduces the checked-in trace byte-for-byte "
             f"({len(golden)} bytes, switch at step 2, stop on eos)")


# -- 5: routing baselines ----------------------------------------------------------------


def test_routing_baselines_are_sane(capsys, benchmark_run):
    routing = benchmark_run["report"]["routing"]
    oracle = routing["oracle_baseline"]
    rand = routing["random_baseline"]
    trials = routing["random_trials"]
    ok = oracle == 1.0 and trials >= 1000 and abs(rand - 1.0 / 6.0) <= 0.03
    _verdict(capsys, 5, ok,
             f"oracle routing {oracle * 100:.2f}% (need exactly 100.00%), random baseline "
             f"{rand * 100:.2f}% over {trials} trials (need 16.67% +/- 3pp)")


# -- 6: end-to-end benchmark -----------------------------------------------------------


def test_six_domain_benchmark_beats_meta_alone(capsys, benchmark_run):
    report = benchmark_run["report"]
    learn = report["learnability"]
    min_reduction = min(entry["loss_reduction_pct"] for entry in learn.values())
    kept = [e["kept"] for e in
            json.loads(benchmark_run["wd"].collect_report.read_text())["experts"]]
    routing_acc = report["routing"]["accuracy"]
    routed = report["overall"]["routed"]["overall"]
    meta_only = report["overall"]["meta_only"]["overall"]
    bench_s = sum(report["stage_seconds"].values())
    ok = (min_reduction >= 20.0 and kept == [100] * 6 and routing_acc >= 0.70
          and routed > meta_only and bench_s <= 900.0)
    _verdict(capsys, 6, ok,
             f"experts cut in-domain loss by >={min_reduction:.1f}% (need >=20%), "
             f"{kept[0]} queries/expert, routing {routing_acc * 100:.2f}% (need >=70%), "
             f"answer accuracy {routed * 100:.2f}% routed vs {meta_only * 100:.2f}% unrouted "
             f"(need strict win), benchmark took {bench_s:.0f}s (need <=900s)")


# -- 7: dynamic extension ---------------------------------------------------------------


def test_extended_head_matches_joint_training(capsys, benchmark_run):
    dyn = benchmark_run["dynamic"]
    delta = dyn["routing_delta"]
    ok = dyn["split"] == 4 and abs(delta) <= 0.05 and dyn["timestep0_rows_preserved"] is True
    _verdict(capsys, 7, ok,
             f"4-then-2 extended head routing within {abs(delta) * 100:.2f}pp of joint "
             f"training (need <=5pp; dynamic {dyn['dynamic']['routing_accuracy'] * 100:.2f}% "
             f"vs static {dyn['static']['routing_accuracy'] * 100:.2f}%), "
             f"first-stage rows bit-identical: {dyn['timestep0_rows_preserved']}")


# -- 8: query-set sweep ------------------------------------------------------------------


def test_more_collected_queries_do_not_hurt_routing(capsys, benchmark_run):
    from switchlm.experiment import stage_sweep

    sweep = benchmark_run["sweep"]
    seeds = sweep["seeds"]
    small = sweep["per_size"][10]["routing"]["mean"]
    large = sweep["per_size"][100]["routing"]["mean"]
    first_bytes = (benchmark_run["wd"].report("sweep.json")).read_bytes()
    rerun = stage_sweep(benchmark_run["cfg"], benchmark_run["wd"])
    rerun_bytes = (benchmark_run["wd"].report("sweep.json")).read_bytes()
    ok = (len(seeds) >= 3 and large >= small
          and rerun == sweep and rerun_bytes == first_bytes)
    _verdict(capsys, 8, ok,
             f"mean routing over {len(seeds)} seeds: {large * 100:.2f}% at size 100 >= "
             f"{small * 100:.2f}% at size 10, and a rerun reproduced the curves "
             f"byte-for-byte")


# -- 9: switching latency ----------------------------------------------------------------


def test_switch_overhead_within_bound(capsys, benchmark_run):
    lat = benchmark_run["latency"]
    ok = (lat["queries"] >= 100 and lat["overhead_pct"] < 10.0
          and lat["reference_full_scale_s"] == {"no_switch": 1.589, "switch": 1.616})
    _verdict(capsys, 9, ok,
             f"equal-length switch overhead {lat['overhead_pct']:+.2f}% over "
             f"{lat['queries']} queries x {lat['repetitions']} reps (need <10%, "
             f"informational; full-scale reference 1.589s vs 1.616s; "
             f"switched fraction {lat['switched_fraction'] * 100:.0f}%)")


# -- 10: plumbing ------------------------------------------------------------------------


def test_save_load_loopback_and_retraining_are_bit_exact(capsys, benchmark_run, tmp_path):
    cfg, wd = benchmark_run["cfg"], benchmark_run["wd"]
    vocab, meta, _ = _load_models(cfg, wd)

    head_roundtrip = tmp_path / "head.json"
    save_head(load_head(wd.head), head_roundtrip)
    head_ok = head_roundtrip.read_bytes() == wd.head.read_bytes()

    ckpt_roundtrip = tmp_path / "meta.json"
    bb.save_checkpoint(bb.load_checkpoint(wd.model("meta"), vocab), ckpt_roundtrip)
    ckpt_ok = ckpt_roundtrip.read_bytes() == wd.model("meta").read_bytes()

    server = serve_backend(meta, "meta", "127.0.0.1", 0)
    server.serve_in_thread()
    remote = RemoteBackend("meta", server.address,
                           capabilities=("hidden_state", "word_logits", "generate"))
    loop_ok = True
    try:
        tests = _test_sets(wd)
        contexts = [f"{pairs[0].query}<sep>" for pairs in tests.values()]
        for ctx in contexts:
            h_local = bb.hidden_state(meta, vocab.parse_context(ctx))
            loop_ok &= remote.hidden_state(ctx).tobytes() == h_local.tobytes()
            loop_ok &= (remote.word_logits(ctx).tobytes()
                        == bb.word_logits(meta, h_local).tobytes())
    finally:
        remote.close()
        server.shutdown()

    first, second = tmp_path / "h1.json", tmp_path / "h2.json"
    stage_train_head(cfg, wd, first)
    stage_train_head(cfg, wd, second)
    retrain_ok = (first.read_bytes() == second.read_bytes()
                  and first.read_bytes() == wd.head.read_bytes())

    ok = head_ok and ckpt_ok and loop_ok and retrain_ok
    _verdict(capsys, 10, ok,
             f"head round-trip bit-exact: {head_ok}; checkpoint round-trip bit-exact: "
             f"{ckpt_ok}; remote hidden states and logits match in-process bytes: "
             f"{loop_ok}; retrained head files byte-identical: {retrain_ok}")
