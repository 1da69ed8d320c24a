"""Command-line front end.

Every subcommand reads defaults from an optional YAML config (one section
per subcommand), lets flags override them, and either runs in-process or
POSTs the same request to a running service via ``--server``.  Exit codes:
0 success, 1 validation or usage error, 2 runtime error.
"""

from __future__ import annotations

import json
import shlex

import click
import yaml
from click.core import ParameterSource
from pydantic import ValidationError

from . import __version__, ops
from .errors import ToolkitError
from .schemas import (
    CalibrateRequest,
    CleanseRequest,
    DetectRequest,
    DetectorSpec,
    EvaluateRequest,
    PoisonRequest,
    SynthRequest,
)

FORMAT_CHOICE = click.Choice(["manifest", "voc_xml", "coco_json"])
ATTACK_CHOICE = click.Choice(["oga", "rma", "gma", "oda"])


@click.group()
@click.version_option(__version__, prog_name="detpoison")
def cli() -> None:
    """Dataset poisoning, evaluation, and defense tooling for detectors."""


def common_options(fn):
    fn = click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="YAML config; flags override its keys.",
    )(fn)
    fn = click.option(
        "--server",
        default=None,
        metavar="URL",
        help="POST the request to a running service instead of in-process.",
    )(fn)
    return fn


def detector_options(fn):
    fn = click.option("--detector-mode", type=click.Choice(["clean", "infected"]), default="clean", show_default=True)(fn)
    fn = click.option("--kind", type=ATTACK_CHOICE, default=None, help="Backdoor kind of an infected detector.")(fn)
    fn = click.option("--det-target", default=None, help="Target class of an infected detector.")(fn)
    fn = click.option("--det-trigger", default=None, help="Trigger file or builtin name for an infected detector.")(fn)
    fn = click.option("--det-trigger-size", type=int, default=None)(fn)
    fn = click.option("--det-alpha", type=float, default=0.5, show_default=True)(fn)
    fn = click.option("--gma-anywhere", is_flag=True, default=False)(fn)
    fn = click.option("--classes", default=None, help="Comma-separated detector class table override.")(fn)
    fn = click.option("--adapter-cmd", default=None, help="Shell command of an external detector adapter.")(fn)
    fn = click.option("--detector-url", default=None, help="Base URL of an HTTP detector.")(fn)
    fn = click.option("--timeout", type=float, default=60.0, show_default=True)(fn)
    fn = click.option("--batch-size", type=int, default=1, show_default=True)(fn)
    return fn


def _merge(ctx: click.Context, section: str, values: dict) -> tuple[dict, str | None]:
    """Overlay config-file keys under explicitly given flags."""
    config_path = values.pop("config_path", None)
    server = values.pop("server", None)
    sec: dict = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise click.UsageError(f"config {config_path} must be a mapping")
        sec = data.get(section, {})
        if not isinstance(sec, dict):
            raise click.UsageError(f"config section '{section}' must be a mapping")
        for key in sec:
            if key not in values and key != "server":
                raise click.UsageError(
                    f"unknown config key '{key}' in section '{section}'"
                )
        if server is None and "server" in sec:
            server = sec["server"]
    merged = {}
    for key, val in values.items():
        given = ctx.get_parameter_source(key) == ParameterSource.COMMANDLINE
        merged[key] = val if given or key not in sec else sec[key]
    return merged, server


def _require(merged: dict, *keys: str) -> None:
    for key in keys:
        if merged.get(key) is None:
            flag = "--" + key.replace("_", "-")
            raise click.UsageError(f"missing required key '{key}' ({flag} or config)")


def _model(cls, fields: dict):
    try:
        return cls(**fields)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"]) or "request"
        raise click.UsageError(f"invalid value for '{loc}': {first['msg']}") from exc


def _detector_spec(merged: dict) -> DetectorSpec:
    classes = merged.pop("classes")
    adapter_cmd = merged.pop("adapter_cmd")
    fields = {
        "mode": merged.pop("detector_mode"),
        "kind": merged.pop("kind"),
        "target_class": merged.pop("det_target"),
        "trigger": merged.pop("det_trigger"),
        "trigger_size": merged.pop("det_trigger_size"),
        "alpha": merged.pop("det_alpha"),
        "gma_anywhere": merged.pop("gma_anywhere"),
        "url": merged.pop("detector_url"),
        "timeout": merged.pop("timeout"),
        "batch_size": merged.pop("batch_size"),
    }
    if classes:
        fields["classes"] = (
            [c.strip() for c in classes.split(",")] if isinstance(classes, str) else classes
        )
    if adapter_cmd:
        fields["command"] = (
            shlex.split(adapter_cmd) if isinstance(adapter_cmd, str) else adapter_cmd
        )
    return _model(DetectorSpec, fields)


def _post(server: str, command: str, request) -> dict:
    import httpx

    url = server.rstrip("/") + "/" + command
    try:
        resp = httpx.post(url, json=request.model_dump(mode="json"), timeout=600.0)
    except httpx.HTTPError as exc:
        raise RuntimeError(f"cannot reach {url}: {exc}") from exc
    if resp.status_code == 422:
        try:
            detail = resp.json().get("detail", resp.text)
        except json.JSONDecodeError:
            detail = resp.text
        raise ToolkitError(f"{command}: {detail}")
    if resp.status_code >= 400:
        raise RuntimeError(f"{url} -> HTTP {resp.status_code}: {resp.text[:200]}")
    return resp.json()


def _dispatch(server: str | None, command: str, request, runner) -> dict:
    if server:
        return _post(server, command, request)
    return runner(request).model_dump()


@cli.command()
@click.option("--out", "out_dir", default=None, help="Output run directory.")
@click.option("--n-images", type=int, default=20, show_default=True)
@click.option("--width", type=int, default=128, show_default=True)
@click.option("--height", type=int, default=128, show_default=True)
@click.option("--n-classes", type=int, default=6, show_default=True)
@click.option("--min-objects", type=int, default=1, show_default=True)
@click.option("--max-objects", type=int, default=4, show_default=True)
@click.option("--min-object-size", type=int, default=12, show_default=True)
@click.option("--max-object-size", type=int, default=36, show_default=True)
@click.option("--impurity/--no-impurity", default=True, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--role", default="test_benign", show_default=True)
@common_options
@click.pass_context
def synth(ctx: click.Context, **values) -> None:
    """Generate a synthetic annotated dataset."""
    merged, server = _merge(ctx, "synth", values)
    _require(merged, "out_dir")
    req = _model(SynthRequest, merged)
    data = _dispatch(server, "synth", req, ops.run_synth)
    click.echo(
        f"wrote {data['n_images']} images, {data['n_objects']} objects "
        f"-> {data['manifest_path']}"
    )


@cli.command()
@click.option("--dataset", default=None, help="Input dataset path.")
@click.option("--format", "format_", type=FORMAT_CHOICE, default="manifest", show_default=True)
@click.option("--out", "out_dir", default=None, help="Output run directory.")
@click.option("--attack", type=ATTACK_CHOICE, default=None)
@click.option("--target", "target_class", default="red", show_default=True)
@click.option("--rate", type=float, default=None, help="Poisoning rate; attack default when omitted.")
@click.option("--trigger", default=None, help="Trigger file or builtin name.")
@click.option("--trigger-size", type=int, default=None)
@click.option("--alpha", type=float, default=0.5, show_default=True)
@click.option("--placement", type=click.Choice(["fixed", "random_in_scope"]), default="fixed", show_default=True)
@click.option("--triggers-per-image", type=int, default=1, show_default=True)
@click.option("--oga-box-width", type=float, default=30.0, show_default=True)
@click.option("--oga-box-height", type=float, default=60.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="train", show_default=True)
@click.option("--mode", type=click.Choice(["replace", "union"]), default="replace", show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@common_options
@click.pass_context
def poison(ctx: click.Context, **values) -> None:
    """Poison a training split or build an attacked test set."""
    values["format"] = values.pop("format_")
    merged, server = _merge(ctx, "poison", values)
    _require(merged, "dataset", "out_dir", "attack")
    req = _model(PoisonRequest, merged)
    data = _dispatch(server, "poison", req, ops.run_poison)
    click.echo(
        f"poisoned {data['n_poisoned']} of {data['n_images']} images "
        f"-> {data['manifest_path']}"
    )
    click.echo(f"records -> {data['records_path']}")


@cli.command()
@click.option("--dataset", default=None, help="Input dataset path.")
@click.option("--format", "format_", type=FORMAT_CHOICE, default="manifest", show_default=True)
@click.option("--out", "out_dir", default=None, help="Output run directory.")
@click.option("--workers", type=int, default=1, show_default=True)
@detector_options
@common_options
@click.pass_context
def detect(ctx: click.Context, **values) -> None:
    """Run a detector over a dataset and save its detections."""
    values["format"] = values.pop("format_")
    merged, server = _merge(ctx, "detect", values)
    _require(merged, "dataset", "out_dir")
    detector = _detector_spec(merged)
    req = _model(DetectRequest, {**merged, "detector": detector})
    data = _dispatch(server, "detect", req, ops.run_detect)
    click.echo(
        f"{data['n_detections']} detections over {data['n_images']} images "
        f"-> {data['detections_path']}"
    )


@cli.command()
@click.option("--attack", type=ATTACK_CHOICE, default=None)
@click.option("--target", "target_class", default="red", show_default=True)
@click.option("--benign-dets", default=None, help="Detections on the benign set.")
@click.option("--poisoned-dets", default=None, help="Detections on the attacked set.")
@click.option("--benign-dataset", default=None)
@click.option("--attacked-dataset", default=None)
@click.option("--records", default=None, help="Poison records file.")
@click.option("--format", "format_", type=FORMAT_CHOICE, default="manifest", show_default=True)
@click.option("--classes", default=None, help="Comma-separated detector class table.")
@click.option("--iou", "iou_threshold", type=float, default=0.5, show_default=True)
@click.option("--conf", "confidence_threshold", type=float, default=0.5, show_default=True)
@click.option("--differential", is_flag=True, default=False)
@click.option("--out", "out_dir", default=None, help="Output run directory.")
@common_options
@click.pass_context
def evaluate(ctx: click.Context, **values) -> None:
    """Produce the per-attack metrics report."""
    values["format"] = values.pop("format_")
    merged, server = _merge(ctx, "evaluate", values)
    _require(
        merged,
        "attack",
        "benign_dets",
        "poisoned_dets",
        "benign_dataset",
        "attacked_dataset",
        "records",
        "out_dir",
    )
    if isinstance(merged.get("classes"), str):
        merged["classes"] = [c.strip() for c in merged["classes"].split(",")]
    req = _model(EvaluateRequest, merged)
    data = _dispatch(server, "evaluate", req, ops.run_evaluate)
    click.echo(data["table"])
    click.echo(f"report -> {data['report_path']}")


@cli.command()
@click.option("--dataset", default=None, help="Clean dataset to score.")
@click.option("--bank-dataset", default=None, help="Clean dataset for feature crops.")
@click.option("--format", "format_", type=FORMAT_CHOICE, default="manifest", show_default=True)
@click.option("--out", "out_dir", default=None, help="Output run directory.")
@click.option("--n-features", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--blend-weight", type=float, default=0.5, show_default=True)
@click.option("--min-confidence", "min_inspection_confidence", type=float, default=0.5, show_default=True)
@click.option("--delta-scale", type=float, default=2.0, show_default=True)
@click.option("--min-samples", type=int, default=10, show_default=True)
@detector_options
@common_options
@click.pass_context
def calibrate(ctx: click.Context, **values) -> None:
    """Fit the entropy band (mean, sigma, delta) on clean data."""
    values["format"] = values.pop("format_")
    merged, server = _merge(ctx, "calibrate", values)
    _require(merged, "dataset", "bank_dataset", "out_dir")
    detector = _detector_spec(merged)
    req = _model(CalibrateRequest, {**merged, "detector": detector})
    data = _dispatch(server, "calibrate", req, ops.run_calibrate)
    click.echo(
        f"mean={data['mean']:.6f} sigma={data['sigma']:.6f} "
        f"delta={data['delta']:.6f} n_boxes={data['n_boxes']}"
    )
    click.echo(f"report -> {data['report_path']}")


@cli.command()
@click.option("--dataset", default=None, help="Dataset to inspect.")
@click.option("--bank-dataset", default=None, help="Clean dataset for feature crops.")
@click.option("--format", "format_", type=FORMAT_CHOICE, default="manifest", show_default=True)
@click.option("--out", "out_dir", default=None, help="Output run directory.")
@click.option("--mean", "detection_mean", type=float, default=None, help="Band center from calibrate.")
@click.option("--delta", "detection_threshold", type=float, default=None, help="Band half-width from calibrate.")
@click.option("--calibration", default=None, help="report.json from calibrate; fills --mean/--delta.")
@click.option("--n-features", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--blend-weight", type=float, default=0.5, show_default=True)
@click.option("--min-confidence", "min_inspection_confidence", type=float, default=0.5, show_default=True)
@detector_options
@common_options
@click.pass_context
def cleanse(ctx: click.Context, **values) -> None:
    """Flag images whose boxes leave the calibrated entropy band."""
    values["format"] = values.pop("format_")
    merged, server = _merge(ctx, "cleanse", values)
    calibration = merged.pop("calibration", None)
    if calibration:
        with open(calibration, "r", encoding="utf-8") as fh:
            cal = json.load(fh)
        if merged.get("detection_mean") is None:
            merged["detection_mean"] = cal["mean"]
        if merged.get("detection_threshold") is None:
            merged["detection_threshold"] = cal["delta"]
    _require(
        merged, "dataset", "bank_dataset", "out_dir",
        "detection_mean", "detection_threshold",
    )
    detector = _detector_spec(merged)
    req = _model(CleanseRequest, {**merged, "detector": detector})
    data = _dispatch(server, "cleanse", req, ops.run_cleanse)
    click.echo(
        f"flagged {data['n_flagged']} of {data['n_images']} images "
        f"-> {data['verdicts_path']}"
    )


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@detector_options
@common_options
@click.pass_context
def serve(ctx: click.Context, **values) -> None:
    """Run the HTTP service (pipelines plus the wire-protocol detector)."""
    import uvicorn

    from .service import create_app

    merged, _ = _merge(ctx, "serve", values)
    host = merged.pop("host")
    port = merged.pop("port")
    detector = _detector_spec(merged)
    uvicorn.run(create_app(detector), host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    try:
        cli(args=argv, prog_name="detpoison", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        if getattr(exc, "exit_code", 1) == 0:
            click.echo(exc.format_message())
            return 0
        exc.show()
        return 1
    except ToolkitError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 2
    except Exception as exc:
        click.echo(f"runtime error: {type(exc).__name__}: {exc}", err=True)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
