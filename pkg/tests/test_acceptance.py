"""Acceptance gate: each test checks one numbered criterion at its stated
tolerance and prints a single PASS/FAIL line to the terminal."""

import itertools
import json
import math
import random
import time
from dataclasses import replace as dc_replace

from scipy import stats as _stats

from ringveil import adversary, cli, crypto, protocol, schedule, simnet, token
from ringveil._kernel import square_chain


def report(capsys, number, name, passed, detail):
    verdict = "PASS" if passed else "FAIL"
    with capsys.disabled():
        print(f"\nACCEPTANCE {number} [{verdict}] {name}: {detail}")
    assert passed, f"criterion {number} failed: {detail}"


def random_coprime_base(rng, n):
    while True:
        a = rng.randrange(2, n)
        if math.gcd(a, n) == 1:
            return a


def test_criterion_1_totient_verification_equivalence(capsys):
    rng = random.Random(1001)
    started = time.perf_counter()
    mismatches = 0
    for batch in range(20):
        params = crypto.gen_params(64, rng_seed=rng.randrange(2**32))
        for _ in range(50):
            a = random_coprime_base(rng, params.n)
            t_hat = rng.randrange(0, 2**14 + 1)
            puzzle = crypto.puzzle_create(params, a, t_hat, b"c" * 13, 7, 2**62)
            sequential = square_chain(a, params.n, t_hat)
            if crypto.puzzle_fast_eval(puzzle, params.phi) != sequential:
                mismatches += 1
    elapsed = time.perf_counter() - started
    report(
        capsys, 1, "totient-verification equivalence",
        mismatches == 0 and elapsed < 30.0,
        f"1000 puzzles, {mismatches} mismatches, {elapsed:.1f}s (budget 30s)",
    )


def test_criterion_2_verifiable_delay(capsys, monkeypatch):
    rng = random.Random(2002)
    params = crypto.gen_params(64, rng_seed=77)

    squarings = []
    real_chain = crypto._square_chain

    def counting_chain(value, modulus, steps):
        squarings.append(steps)
        return real_chain(value, modulus, steps)

    modpows = []
    real_pow = crypto._modpow

    def counting_pow(base, exp, mod):
        modpows.append(1)
        return real_pow(base, exp, mod)

    monkeypatch.setattr(crypto, "_square_chain", counting_chain)
    monkeypatch.setattr(crypto, "_modpow", counting_pow)

    puzzles = []
    for _ in range(1000):
        a = random_coprime_base(rng, params.n)
        t_hat = rng.randrange(1, 1500)
        key = rng.randrange(params.n)
        modpows.clear()
        puzzles.append((crypto.puzzle_create(params, a, t_hat, b"c" * 13, key, 2**62), key))

    exact = 0
    for puzzle, key in puzzles:
        squarings.clear()
        solution = crypto.puzzle_solve(puzzle)
        if sum(squarings) == puzzle.t_hat and solution.key == key:
            exact += 1

    fast_ok = 0
    for puzzle, _ in puzzles:
        modpows.clear()
        crypto.puzzle_fast_eval(puzzle, params.phi)
        if len(modpows) == 2:
            fast_ok += 1

    monkeypatch.setattr(crypto, "_square_chain", real_chain)
    monkeypatch.setattr(crypto, "_modpow", real_pow)
    slot_puzzles = [
        crypto.puzzle_create(params, 3 + 2 * i, 1000 + 50 * i, b"c" * 13, 5, 2**62)
        for i in range(4)
    ]
    accuracy = adversary.record_attack(slot_puzzles, 1050, trials=1000, rng_seed=2)
    sigma = math.sqrt(0.25 * 0.75 / 1000)
    chance_ok = abs(accuracy - 0.25) <= 3 * sigma

    report(
        capsys, 2, "verifiable-delay property",
        exact == 1000 and fast_ok == 1000 and chance_ok,
        f"{exact}/1000 solves at exactly t_hat squarings, {fast_ok}/1000 fast evals "
        f"at 2 exponentiations, record-attack accuracy {accuracy:.3f} "
        f"(chance 0.25 within {3 * sigma:.3f})",
    )


def brute_force_smallest_extension(devices, pairs, n):
    best = None
    for perm in itertools.permutations(range(1, n + 1)):
        position = {d: i for i, d in enumerate(perm)}
        if all(position[a] <= position[b] for a, b in pairs):
            best = list(perm)
            break  # permutations enumerate in lexicographic order
    return best


def test_criterion_3_linear_extension_oracle(capsys):
    rng = random.Random(3003)
    started = time.perf_counter()
    mismatches = 0
    for _ in range(500):
        n = rng.randrange(1, 8)
        n_pairs = rng.randrange(0, 7)
        pairs = []
        for _ in range(n_pairs):
            a, b = rng.sample(range(1, n + 1), 2) if n >= 2 else (1, 1)
            pairs.append((a, b))
        order = schedule.PartialOrder(
            devices=tuple(range(1, n + 1)), pairs=tuple(pairs)
        )
        expected = brute_force_smallest_extension(order.devices, pairs, n)
        try:
            produced = schedule.linear_extension(order, n)
        except schedule.CycleError:
            produced = None
        if produced != expected:
            mismatches += 1
    elapsed = time.perf_counter() - started
    report(
        capsys, 3, "linear-extension oracle equivalence",
        mismatches == 0 and elapsed < 60.0,
        f"500 posets (n<=7, <=6 pairs), {mismatches} mismatches, "
        f"{elapsed:.1f}s (budget 60s)",
    )


FOUR_COMMAND_SCRIPT = (
    ("set", 1, "on"),
    ("set", 2, "off"),
    ("read", 3),
    ("set", 4, "on"),
)


def test_criterion_4_traffic_shape(capsys):
    interval = 1_000_000
    star_config = simnet.SimConfig(
        n_physical=4, topology=simnet.STAR, rounds=1, modulus_bits=64,
        seed=41, command_interval=interval,
    )
    star_trace, _, _ = simnet.run(star_config, script=FOUR_COMMAND_SCRIPT)
    times = sorted(rec[0] for rec in star_trace.records)
    bursts = 1 + sum(1 for a, b in zip(times, times[1:]) if b - a > interval // 2)

    ring_config = simnet.SimConfig(
        n_physical=4, rounds=20, modulus_bits=64, seed=41,
    )
    order = schedule.PartialOrder(
        devices=(1, 2, 3, 4), pairs=(), script=FOUR_COMMAND_SCRIPT,
    )
    plan = schedule.compile(
        order,
        simnet.registry_for(ring_config),
        crypto.gen_params(64, rng_seed=14),
        simnet.predicted_forward_times(ring_config),
        rng_seed=4,
    )
    ring_trace, _, _ = simnet.run(ring_config, plan, script=FOUR_COMMAND_SCRIPT)
    sizes = {rec[3] for rec in ring_trace.records}
    arrivals = [rec[0] for rec in ring_trace.records]
    gaps = [b - a for a, b in zip(arrivals, arrivals[1:])]
    mean_gap = sum(gaps) / len(gaps)
    cv = math.sqrt(sum((g - mean_gap) ** 2 for g in gaps) / len(gaps)) / mean_gap

    report(
        capsys, 4, "traffic-shape reproduction",
        bursts >= 4 and len(sizes) == 1 and cv < 0.05,
        f"star bursts {bursts} (need >=4), ring frame sizes {sorted(sizes)} "
        f"(need constant), inter-arrival CV {cv:.4f} (need <0.05)",
    )


def test_criterion_5_anonymity(capsys):
    params = crypto.gen_params(64, rng_seed=55)
    cfg = adversary.AdversaryConfig(significance=0.01)

    views = []
    texts = (
        "device 1\ndevice 2\ndevice 3\ndevice 4\npair 1 2\n",
        "device 1\ndevice 2\ndevice 3\ndevice 4\npair 4 3\npair 2 1\n",
    )
    for seed, text in zip((50, 51), texts):
        config = simnet.SimConfig(
            n_physical=4, rounds=200, modulus_bits=64, seed=seed, jitter=40,
        )
        plan = schedule.compile(
            schedule.parse_schedule_text(text),
            simnet.registry_for(config),
            params,
            simnet.predicted_forward_times(config),
            rng_seed=seed,
        )
        trace, _, _ = simnet.run(config, plan)
        views.append(adversary.build_view(trace))
    ring_report = adversary.distinguish_schedules(views[0], views[1], cfg)

    star_config = simnet.SimConfig(
        n_physical=4, topology=simnet.STAR, rounds=40, modulus_bits=64,
        seed=52, jitter=40, command_interval=100_000,
    )
    star_trace, _, _ = simnet.run(star_config, script=FOUR_COMMAND_SCRIPT)
    star_report = adversary.distinguish_schedules(
        views[0], adversary.build_view(star_trace), cfg
    )

    rng = random.Random(5005)
    random_bits = rng.randbytes(10_000)
    structured = (b"execution report payload bytes!!" * 313)[:10_000]
    observed = token.data_overwrite(random_bits, structured)
    bins_r = [0] * 256
    bins_o = [0] * 256
    for byte in random_bits:
        bins_r[byte] += 1
    for byte in observed:
        bins_o[byte] += 1
    p_uniform = float(_stats.chisquare(bins_o).pvalue)
    p_pair = float(_stats.chi2_contingency([bins_r, bins_o]).pvalue)

    report(
        capsys, 5, "anonymity as statistical indistinguishability",
        ring_report["verdict"] == "indistinguishable"
        and star_report["verdict"] == "distinguishable"
        and p_uniform > 0.01
        and p_pair > 0.01,
        f"ring-vs-ring {ring_report['verdict']} over 200 rounds, ring-vs-star "
        f"{star_report['verdict']}, data-field uniformity p={p_uniform:.3f} and "
        f"pre/post-overwrite p={p_pair:.3f} (both need >0.01)",
    )


def test_criterion_6_timing_constraint_replay(capsys):
    config = simnet.SimConfig(n_physical=5, rounds=18, modulus_bits=64, seed=66)
    params = crypto.gen_params(64, rng_seed=16)
    text = "device 1\ndevice 2\ndevice 3\ndevice 4\ndevice 5\npair 1 2\npair 2 3\n"
    plan = schedule.compile(
        schedule.parse_schedule_text(text),
        simnet.registry_for(config),
        params,
        simnet.predicted_forward_times(config),
        rng_seed=6,
    )
    _, reports, _ = simnet.run(config, plan)
    verified = protocol.owner_verify_execution(reports, params, plan)
    t_com = {r.device_id: r.t_com for r in reports}
    chain_ok = t_com[1] < t_com[2] < t_com[3]
    free_spread = abs(t_com[4] - t_com[5])

    report(
        capsys, 6, "timing-constraint replay",
        verified and chain_ok and free_spread <= 1,
        f"owner_verify_execution={verified}, chain order "
        f"{t_com[1]}<{t_com[2]}<{t_com[3]}={chain_ok}, incomparable instants "
        f"differ by {free_spread}us (need <=1 tick)",
    )


SWEEP_COUNTS = (3, 15, 27, 39, 51, 63, 75)


def test_criterion_7_sweep_shape(capsys):
    base = simnet.SimConfig(n_physical=3, rounds=3, modulus_bits=64, seed=70)
    rows = simnet.latency_sweep(base, SWEEP_COUNTS)
    latency = [row["mean_latency_us"] for row in rows]
    sizes = [row["mean_token_bytes"] for row in rows]
    increasing = all(b > a for a, b in zip(latency, latency[1:]))
    second_diffs = [
        latency[i + 2] - 2 * latency[i + 1] + latency[i]
        for i in range(len(latency) - 2)
    ]
    convex = all(d >= 0 for d in second_diffs) and second_diffs[-1] > 0
    fit = _stats.linregress(SWEEP_COUNTS, sizes)
    r_squared = fit.rvalue ** 2

    report(
        capsys, 7, "latency/size sweep shape",
        increasing and convex and r_squared >= 0.99,
        f"latency strictly increasing={increasing}, second diffs {second_diffs} "
        f"(need >=0, tail >0), token-size R^2={r_squared:.5f} (need >=0.99)",
    )


def test_criterion_8_replay_determinism(capsys, tmp_path):
    sched = tmp_path / "sched.txt"
    sched.write_text("device 1\ndevice 2\ndevice 3\ndevice 4\npair 1 2\nread 3\n")
    argv_base = [
        "sim", "run", "--mode", "ring", "--devices", "4", "--rounds", "30",
        "--jitter", "40", "--modulus-bits", "64", "--seed", "77",
        "--schedule", str(sched),
    ]
    outs = []
    for name in ("one", "two"):
        out_dir = tmp_path / name
        code = cli.main(argv_base + ["--out-dir", str(out_dir)])
        assert code == 0
        outs.append((out_dir / "trace.csv").read_bytes())
    manifest = json.loads((tmp_path / "one" / "manifest.json").read_text())

    report(
        capsys, 8, "end-to-end determinism",
        outs[0] == outs[1] and manifest["seed"] == 77,
        f"two cmd_sim runs with the same manifest, trace CSVs identical="
        f"{outs[0] == outs[1]} ({len(outs[0])} bytes, seed {manifest['seed']})",
    )


def test_criterion_9_order_authentication(capsys):
    rng = random.Random(9009)
    params = crypto.gen_params(64, rng_seed=90)
    registry = crypto.KeyRegistry.provision(range(1, 4), seed=900)
    foreign = crypto.KeyRegistry.provision(range(1, 4), seed=901)
    order = schedule.parse_schedule_text("device 1\ndevice 2\ndevice 3\npair 1 2\n")
    owner_pk = registry.owner_keypair[1]

    def flip_bit(blob: bytes) -> bytes:
        i = rng.randrange(len(blob))
        return blob[:i] + bytes([blob[i] ^ (1 << rng.randrange(8))]) + blob[i + 1:]

    honest_ok = 0
    for i in range(100):
        plan = schedule.compile(
            order, registry, params, [10, 20, 30], rng_seed=i
        )
        if protocol.hub_verify_order(protocol.owner_create_order(plan, registry), owner_pk):
            honest_ok += 1

    tampered_rejected = 0
    plan = schedule.compile(order, registry, params, [10, 20, 30], rng_seed=424)
    for i in range(100):
        honest = protocol.owner_create_order(plan, registry)
        kind = i % 4
        if kind == 0:
            forged = dc_replace(honest, commands=flip_bit(honest.commands))
        elif kind == 1:
            forged = dc_replace(honest, digest=flip_bit(honest.digest))
        elif kind == 2:
            forged = dc_replace(honest, signature=flip_bit(honest.signature))
        else:
            substituted = crypto.sign_order(honest.digest, foreign.owner_keypair[0])
            forged = dc_replace(honest, signature=substituted)
        if not protocol.hub_verify_order(forged, owner_pk):
            tampered_rejected += 1

    report(
        capsys, 9, "order authentication",
        honest_ok == 100 and tampered_rejected == 100,
        f"{honest_ok}/100 honest orders accepted, "
        f"{tampered_rejected}/100 tampered orders rejected",
    )
