"""Command-line entry point: dataset generation, training, rollout,
invariant verification, and gradient checking.

Configuration precedence is flags > config file > built-in defaults; every
command that writes an output directory echoes the effective configuration
there. All randomness flows from the --seed value.
"""

from __future__ import annotations

import ast
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import dynamics, evaluation, gradcheck as gradcheck_mod, layers, training
from .checkpoint import config_hash, load_checkpoint, save_checkpoint
from .errors import VoltraError
from .precision import default_precision

GRADCHECK_TOL = 1e-5


# ---------------------------------------------------------------------------
# Config files and helpers
# ---------------------------------------------------------------------------

def read_config_file(path) -> dict:
    """Parse a `key = value` file; '#' starts a comment, blank lines ignored."""
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.ClickException(f"{path}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


class Resolver:
    """flags > config file > defaults, with a record of what was used."""

    def __init__(self, config_path):
        self.file_values = read_config_file(config_path) if config_path else {}
        self.effective = {}

    def get(self, key, flag_value, default, cast):
        if flag_value is not None:
            value = flag_value
        elif key in self.file_values:
            value = cast(self.file_values[key])
        else:
            value = default
        self.effective[key] = value
        return value

    def echo_into(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = [f"{k} = {v}" for k, v in self.effective.items()]
        dynamics.atomic_write_text(out_dir / "effective-config.txt", "\n".join(lines) + "\n")


_SAFE_FUNCS = {"sin": math.sin, "cos": math.cos, "tan": math.tan, "sqrt": math.sqrt}
_SAFE_NAMES = {"pi": math.pi, "e": math.e}


def safe_eval(expr: str) -> float:
    """Evaluate a numeric expression allowing sin/cos/tan/sqrt, pi, e."""

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _SAFE_NAMES:
            return _SAFE_NAMES[node.id]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            val = walk(node.operand)
            return val if isinstance(node.op, ast.UAdd) else -val
        if isinstance(node, ast.BinOp) and isinstance(
            node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
        ):
            a, b = walk(node.left), walk(node.right)
            return {
                ast.Add: lambda: a + b,
                ast.Sub: lambda: a - b,
                ast.Mult: lambda: a * b,
                ast.Div: lambda: a / b,
                ast.Pow: lambda: a**b,
            }[type(node.op)]()
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _SAFE_FUNCS:
            if len(node.args) != 1 or node.keywords:
                raise ValueError(f"{node.func.id} takes exactly one argument")
            return _SAFE_FUNCS[node.func.id](walk(node.args[0]))
        raise ValueError(f"unsupported expression element: {ast.dump(node)}")

    try:
        return float(walk(ast.parse(expr, mode="eval")))
    except ValueError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot parse {expr!r}: {exc}") from exc


def parse_vector(text: str, n: int, what: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != n:
        raise click.ClickException(f"{what} needs {n} comma-separated values, got {text!r}")
    try:
        return np.array([safe_eval(p) for p in parts])
    except ValueError as exc:
        raise click.ClickException(f"{what}: {exc}")


def _coeffs_from(resolver, coeffs_text, moments_text):
    if moments_text is not None:
        m = parse_vector(moments_text, 3, "--moments")
        resolver.effective["moments"] = moments_text
        return dynamics.moments_to_coeffs(*m)
    text = resolver.get("coeffs", coeffs_text, "1,-0.5,-0.5", str)
    vals = parse_vector(text, 3, "--coeffs")
    return dynamics.RigidBodyParams(*vals)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@click.group()
def main():
    """Volume-preserving transformer integrators for divergence-free ODEs."""


@main.command("generate-data")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--grid-step", type=float, default=None, help="Initial-condition grid step (default 0.01).")
@click.option("--h", "h_step", type=float, default=None, help="Integrator time step (default 0.2).")
@click.option("--t-final", type=float, default=None, help="Final time (default 12.0).")
@click.option("--desk-scale", is_flag=True, help="Coarse preset: grid step 0.1.")
@click.option("--coeffs", default=None, help="Field coefficients 'a,b,c'.")
@click.option("--moments", default=None, help="Moments of inertia 'I1,I2,I3' (overrides --coeffs).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def generate_data(out_dir, grid_step, h_step, t_final, desk_scale, coeffs, moments, config_path):
    """Integrate the reference trajectories and write CSVs plus a manifest."""
    resolver = Resolver(config_path)
    default_step = dynamics.DESK_GRID_STEP if desk_scale else dynamics.DEFAULT_GRID_STEP
    grid_step = resolver.get("grid_step", grid_step, default_step, float)
    h_step = resolver.get("h", h_step, dynamics.DEFAULT_TIME_STEP, float)
    t_final = resolver.get("t_final", t_final, dynamics.DEFAULT_T_FINAL, float)
    rb = _coeffs_from(resolver, coeffs, moments)
    resolver.effective["desk_scale"] = desk_scale
    try:
        records = dynamics.generate_dataset(grid_step=grid_step, h=h_step, t_final=t_final, coeffs=rb)
        manifest = dynamics.write_dataset(out_dir, records)
    except VoltraError as exc:
        raise click.ClickException(str(exc))
    resolver.echo_into(out_dir)
    points = len(records[0].trajectory) if records else 0
    click.echo(f"wrote {len(records)} trajectories ({points} points each) to {out_dir}")
    click.echo(f"manifest: {manifest}")


_ARCH_DEFAULTS = {
    "vpff": {"n_blocks": 6, "n_linear": 1, "n_units": 1, "seq_len": 1},
    "vpt": {"n_blocks": 2, "n_linear": 1, "n_units": 3, "seq_len": 3},
    "st": {"n_blocks": 2, "n_linear": 1, "n_units": 3, "seq_len": 3},
}


@main.command("train")
@click.option("--model", "model_kind", required=True, type=click.Choice(layers.MODEL_KINDS))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--epochs", type=int, default=None, help="Training epochs (default 500000).")
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--eta1", type=float, default=None, help="Initial learning rate (default 1e-2).")
@click.option("--eta2", type=float, default=None, help="Final learning rate (default 1e-6).")
@click.option("--rho1", type=float, default=None, help="First-moment decay (default 0.9).")
@click.option("--rho2", type=float, default=None, help="Second-moment decay (default 0.99).")
@click.option("--delta", type=float, default=None, help="Adam epsilon (default 1e-8).")
@click.option("--precision", type=click.Choice(["f32", "f64"]), default=None)
@click.option("--n-blocks", type=int, default=None)
@click.option("--n-linear", type=int, default=None)
@click.option("--n-units", type=int, default=None)
@click.option("--seq-len", type=int, default=None)
@click.option("--shift", type=int, default=None, help="Window shift (default: seq length).")
@click.option("--stride", type=int, default=None, help="Window stride along a trajectory (default 1).")
@click.option("--desk-scale", is_flag=True, help="Desk preset: 20000 epochs, batch 128, stride 3.")
@click.option("--checkpoint-every", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def train_cmd(
    model_kind, data_dir, out_dir, epochs, batch_size, seed, eta1, eta2, rho1, rho2, delta,
    precision, n_blocks, n_linear, n_units, seq_len, shift, stride, desk_scale,
    checkpoint_every, config_path,
):
    """Train one architecture on a generated dataset."""
    resolver = Resolver(config_path)
    arch = _ARCH_DEFAULTS[model_kind]
    epochs_default = training.DESK_SCALE["n_epochs"] if desk_scale else 500_000
    batch_default = training.DESK_SCALE["batch_size"] if desk_scale else 128
    stride_default = training.DESK_SCALE["window_stride"] if desk_scale else 1
    cfg = training.TrainConfig(
        eta1=resolver.get("eta1", eta1, 1e-2, float),
        eta2=resolver.get("eta2", eta2, 1e-6, float),
        rho1=resolver.get("rho1", rho1, 0.9, float),
        rho2=resolver.get("rho2", rho2, 0.99, float),
        delta=resolver.get("delta", delta, 1e-8, float),
        n_epochs=resolver.get("epochs", epochs, epochs_default, int),
        batch_size=resolver.get("batch_size", batch_size, batch_default, int),
        seed=resolver.get("seed", seed, 0, int),
        precision=resolver.get("precision", precision, default_precision(), str),
    )
    spec = layers.ModelSpec(
        kind=model_kind,
        d=3,
        n_blocks=resolver.get("n_blocks", n_blocks, arch["n_blocks"], int),
        n_linear=resolver.get("n_linear", n_linear, arch["n_linear"], int),
        n_units=resolver.get("n_units", n_units, arch["n_units"], int),
        seq_len=resolver.get("seq_len", seq_len, arch["seq_len"], int),
    )
    shift = resolver.get("shift", shift, spec.seq_len, int)
    stride = resolver.get("stride", stride, stride_default, int)
    resolver.effective["model"] = model_kind
    resolver.effective["desk_scale"] = desk_scale

    try:
        records = dynamics.load_dataset(data_dir)
        mode = "feedforward" if model_kind == "vpff" else "transformer"
        batch = dynamics.make_windows(records, seq_len=spec.seq_len, shift=shift, mode=mode, stride=stride)
        store = layers.init_params(spec, seed=cfg.seed, precision=cfg.precision)
        expected = layers.count_params(spec)
        click.echo(f"parameters: {store.n_params} (expected {expected})")
        if store.n_params != expected:
            raise click.ClickException("parameter count mismatch between store and spec")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        resolver.echo_into(out)
        meta_base = {
            "seed": cfg.seed,
            "config_hash": config_hash(resolver.effective),
            "windows": len(batch),
        }

        def save_snapshot(epoch, current_store, record):
            save_checkpoint(
                out / f"checkpoint-epoch{epoch + 1}.json",
                spec,
                current_store,
                {**meta_base, "epochs_completed": epoch + 1, "final_loss": record.losses[-1]},
            )

        record = training.train(
            spec, store, batch, cfg,
            checkpoint_every=resolver.get("checkpoint_every", checkpoint_every, 0, int),
            checkpoint_fn=save_snapshot,
        )
        final_loss = record.losses[-1] if record.losses else float("nan")
        save_checkpoint(
            out / "checkpoint.json",
            spec,
            store,
            {**meta_base, "epochs_completed": cfg.n_epochs, "final_loss": final_loss},
        )
        rows = ["epoch,loss,lr,seconds"]
        for epoch, loss, lr, sec in record.history_rows():
            rows.append(f"{epoch},{loss:.17g},{lr:.17g},{sec:.6f}")
        dynamics.atomic_write_text(out / "history.csv", "\n".join(rows) + "\n")
    except VoltraError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"final loss: {final_loss:.6g}")
    click.echo(f"checkpoint: {out / 'checkpoint.json'}")


@main.command("rollout")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--ic", default=None, help="Initial condition, e.g. 'sin(1.1),0,cos(1.1)'.")
@click.option("--v", "v_value", type=float, default=None, help="Grid value for a family IC.")
@click.option("--family", type=click.Choice(dynamics.IC_FAMILIES), default=None)
@click.option("--steps", type=int, default=None, help="Time steps to predict (default 500).")
@click.option("--h", "h_step", type=float, default=None)
@click.option("--coeffs", default=None)
@click.option("--moments", default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def rollout_cmd(checkpoint_path, out_path, ic, v_value, family, steps, h_step, coeffs, moments, config_path):
    """Autoregressive prediction from a checkpoint, with implicit-midpoint reference."""
    resolver = Resolver(config_path)
    steps = resolver.get("steps", steps, 500, int)
    h_step = resolver.get("h", h_step, dynamics.DEFAULT_TIME_STEP, float)
    rb = _coeffs_from(resolver, coeffs, moments)
    if ic is not None:
        z0 = parse_vector(ic, 3, "--ic")
        resolver.effective["ic"] = ic
    else:
        v_value = resolver.get("v", v_value, 1.1, float)
        family = resolver.get("family", family, "x", str)
        z0 = dynamics.initial_state(family, v_value)
    try:
        spec, store, _meta = load_checkpoint(checkpoint_path)
        result = evaluation.rollout(spec, store, rb, z0, h=h_step, n_steps=steps)
        evaluation.write_rollout_csv(out_path, result)
    except VoltraError as exc:
        raise click.ClickException(str(exc))
    summary = evaluation.rollout_error(result)
    click.echo(f"wrote {len(result)} rows to {out_path}")
    click.echo(
        f"max error {summary.max_error:.6g}, "
        f"max invariant deviation {summary.max_invariant_deviation:.6g}"
    )


@main.command("invariants")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(exists=True))
@click.option("--samples", type=int, default=None, help="Sample inputs to test (default 10).")
@click.option("--seed", type=int, default=None)
@click.option("--h-fd", type=float, default=None, help="Finite-difference step (default 1e-5).")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def invariants_cmd(checkpoint_path, samples, seed, h_fd, out_path, config_path):
    """Check |det(Jacobian) - 1| on sample inputs; nonzero exit on violation."""
    resolver = Resolver(config_path)
    samples = resolver.get("samples", samples, 10, int)
    seed = resolver.get("seed", seed, 0, int)
    h_fd = resolver.get("h_fd", h_fd, evaluation.FD_JACOBIAN_STEP, float)
    try:
        spec, store, _meta = load_checkpoint(checkpoint_path)
        report = evaluation.verify_volume_preservation(spec, store, n_samples=samples, seed=seed, fd_step=h_fd)
        if out_path:
            evaluation.write_volume_report(out_path, report)
            click.echo(f"report: {out_path}")
    except VoltraError as exc:
        raise click.ClickException(str(exc))
    click.echo(
        f"{spec.kind}: max |det - 1| = {report.max_unit_deviation:.3e}, "
        f"route gap = {report.max_route_gap:.3e}"
    )
    if not report.structural:
        click.echo("no structural volume guarantee for this architecture; check skipped")
        return
    if report.max_unit_deviation >= evaluation.VOLUME_TOL:
        click.echo(f"FAIL: deviation exceeds {evaluation.VOLUME_TOL}", err=True)
        sys.exit(1)
    click.echo("volume preservation holds")


@main.command("gradcheck")
@click.option("--model", "model_kind", required=True, type=click.Choice(layers.MODEL_KINDS))
@click.option("--seed", type=int, default=None)
@click.option("--batch-size", type=int, default=None, help="Synthetic windows to use (default 8).")
@click.option("--step", type=float, default=None, help="Finite-difference step (default 1e-5).")
@click.option("--n-blocks", type=int, default=None)
@click.option("--n-linear", type=int, default=None)
@click.option("--n-units", type=int, default=None)
@click.option("--seq-len", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def gradcheck_cmd(model_kind, seed, batch_size, step, n_blocks, n_linear, n_units, seq_len, config_path):
    """Compare tape gradients against central differences; nonzero exit on failure."""
    resolver = Resolver(config_path)
    arch = _ARCH_DEFAULTS[model_kind]
    seed = resolver.get("seed", seed, 0, int)
    batch_size = resolver.get("batch_size", batch_size, 8, int)
    step = resolver.get("step", step, gradcheck_mod.DEFAULT_FD_STEP, float)
    spec = layers.ModelSpec(
        kind=model_kind,
        d=3,
        n_blocks=resolver.get("n_blocks", n_blocks, arch["n_blocks"], int),
        n_linear=resolver.get("n_linear", n_linear, arch["n_linear"], int),
        n_units=resolver.get("n_units", n_units, arch["n_units"], int),
        seq_len=resolver.get("seq_len", seq_len, arch["seq_len"], int),
    )
    try:
        store = layers.init_params(spec, seed=seed, precision="f64")
        batch = gradcheck_mod.random_window_batch(spec, batch_size, seed)
        report = gradcheck_mod.grad_check(spec, store, batch, step=step)
    except VoltraError as exc:
        raise click.ClickException(str(exc))
    click.echo(
        f"{model_kind}: max rel err {report.max_rel_diff:.3e}, "
        f"max abs err {report.max_abs_diff:.3e} "
        f"(worst group: {report.worst_group()})"
    )
    if report.max_rel_diff >= GRADCHECK_TOL:
        click.echo(f"FAIL: relative error exceeds {GRADCHECK_TOL}", err=True)
        sys.exit(1)
    click.echo("gradients verified")


if __name__ == "__main__":
    main()
