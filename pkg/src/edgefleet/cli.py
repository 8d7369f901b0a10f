"""Operator command line: train, quantize, package, deploy, benchmark.

Every subcommand is deterministic given (--seed, inputs) apart from
wall-clock latency fields. Repository commands are thin clients of the
registry API and surface server errors verbatim with a nonzero exit.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading
from pathlib import Path

from .agent import AgentConfig, EdgeAgent, fleet_configs
from .bench import BenchmarkError, BenchmarkInput, run_benchmark
from .bundle import (
    IntegrityError,
    ManifestError,
    ParseError,
    pack,
    parse_version,
    unpack,
)
from .client import ApiError, RegistryClient
from .httpd import make_server
from .quantize import (
    CalibrationError,
    calibrate,
    quantize_model_dynamic,
    quantize_model_static,
)
from .registry import Registry, RegistryConfig
from .tensor import ModelGraph
from .toydata import (
    DEFAULT_CONDITION_MAP,
    ToyDatasetSpec,
    TrainConfig,
    TrainingError,
    calibration_samples,
    evaluate_accuracy,
    generate_dataset,
    images_to_inputs,
    train_model,
)
from .vqi import ImageFormatError, classify_image, decode_ppm, preprocess

# Fixed timestamp for generated bundles so equal seeds give equal bytes.
TOY_CREATED_AT = "2000-01-01T00:00:00Z"

DEFAULT_REGISTRY_URL = os.environ.get("EDGEFLEET_REGISTRY_URL",
                                      "http://127.0.0.1:8080")


class UsageError(ValueError):
    """Bad command invocation (exit code 2)."""


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------


def _table(headers, rows) -> str:
    cells = [[str(c) for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    def fmt(row):
        return "  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in cells)
    return "\n".join(lines)


def _emit(args, doc, human: str):
    print(json.dumps(doc, indent=2) if args.json else human)


def _read_bundle(path: str):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise UsageError(f"cannot read bundle {path}: {e}") from None
    return data, *unpack(data)


def _bump_patch(version: str) -> str:
    major, minor, patch = parse_version(version)
    return f"{major}.{minor}.{patch + 1}"


def _parse_condition_map(text: str) -> dict:
    mapping = {}
    for part in text.split(","):
        label, _, condition = part.partition("=")
        if not label or not condition:
            raise UsageError(
                f"bad condition map entry {part!r}; expected label=CONDITION"
            )
        mapping[label.strip()] = condition.strip()
    return mapping


def _parse_image_size(text: str) -> tuple:
    try:
        h, _, w = text.lower().partition("x")
        shape = (1, int(h), int(w))
    except ValueError:
        raise UsageError(f"bad image size {text!r}; expected HxW") from None
    return shape


def _parse_listen(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError(f"bad listen address {text!r}; expected HOST:PORT")
    return host, int(port)


def _toy_spec(args) -> ToyDatasetSpec:
    return ToyDatasetSpec(
        seed=args.seed,
        classes=getattr(args, "classes", 3),
        train_per_class=getattr(args, "train_per_class", 200),
        test_per_class=getattr(args, "test_per_class", 100),
        image_shape=_parse_image_size(getattr(args, "image_size", None) or "28x28"),
        noise_level=getattr(args, "noise", 0.15),
    )


def _images_from_dir(directory: str, input_shape: tuple) -> list:
    root = Path(directory)
    if not root.is_dir():
        raise UsageError(f"{directory} is not a directory")
    samples = []
    for path in sorted(root.iterdir()):
        if path.suffix.lower() in (".ppm", ".pgm"):
            samples.append(preprocess(decode_ppm(path.read_bytes()), input_shape))
    if not samples:
        raise UsageError(f"no .ppm/.pgm images found in {directory}")
    return samples


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train_toy(args) -> int:
    spec = _toy_spec(args)
    dataset = generate_dataset(spec)
    config = TrainConfig(
        hidden_units=args.hidden,
        epochs=args.epochs,
        learning_rate=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
    )
    model = train_model(dataset, config)
    train_acc = evaluate_accuracy(model, dataset.train_images, dataset.train_labels)
    test_acc = evaluate_accuracy(model, dataset.test_images, dataset.test_labels)
    bundle = pack(
        model,
        name=args.name,
        version=args.version,
        condition_map=DEFAULT_CONDITION_MAP,
        confidence_floor=args.confidence_floor,
        created_at=TOY_CREATED_AT,
    )
    out = Path(args.out or f"{args.name}-{args.version}.emlm")
    out.write_bytes(bundle.to_bytes())
    doc = {
        "path": str(out),
        "name": args.name,
        "version": args.version,
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
        "parameters": model.parameter_count(),
        "checksum": bundle.manifest.checksum,
    }
    _emit(args, doc,
          f"wrote {out} ({model.parameter_count()} parameters)\n"
          f"train accuracy {train_acc:.4f}  test accuracy {test_acc:.4f}")
    return 0


def cmd_quantize(args) -> int:
    data, manifest, model = _read_bundle(args.bundle)
    if not isinstance(model, ModelGraph):
        raise UsageError(
            f"{args.bundle} holds a {manifest.precision} model; quantize needs fp32"
        )
    if args.mode == "static":
        if args.calibration:
            samples = _images_from_dir(args.calibration, manifest.input_shape)
        elif args.calibration_toy:
            dataset = generate_dataset(_toy_spec(args))
            samples = list(calibration_samples(dataset))
        else:
            raise UsageError(
                "static mode needs --calibration DIR or --calibration-toy"
            )
        stats = calibrate(model, samples)
        quantized = quantize_model_static(model, stats)
    else:
        quantized = quantize_model_dynamic(model)
    version = args.version or _bump_patch(manifest.version)
    bundle = pack(
        quantized,
        name=manifest.name,
        version=version,
        condition_map=manifest.condition_map,
        confidence_floor=manifest.confidence_floor,
        created_at=manifest.created_at,
    )
    out = Path(args.out or f"{manifest.name}-{version}.emlm")
    out.write_bytes(bundle.to_bytes())
    ratio = len(data) / len(bundle.to_bytes())
    doc = {
        "path": str(out),
        "name": manifest.name,
        "version": version,
        "precision": bundle.manifest.precision,
        "fp32_bytes": len(data),
        "quantized_bytes": len(bundle.to_bytes()),
        "size_ratio": ratio,
        "checksum": bundle.manifest.checksum,
    }
    _emit(args, doc,
          f"wrote {out} ({bundle.manifest.precision}), "
          f"size ratio fp32/int8 = {ratio:.2f}")
    return 0


def cmd_pack(args) -> int:
    _, manifest, model = _read_bundle(args.bundle)
    condition_map = (_parse_condition_map(args.condition_map)
                     if args.condition_map else manifest.condition_map)
    floor = (args.confidence_floor if args.confidence_floor is not None
             else manifest.confidence_floor)
    name = args.name or manifest.name
    version = args.version or manifest.version
    bundle = pack(
        model,
        name=name,
        version=version,
        condition_map=condition_map,
        confidence_floor=floor,
        created_at=manifest.created_at,
    )
    out = Path(args.out or f"{name}-{version}.emlm")
    out.write_bytes(bundle.to_bytes())
    doc = {"path": str(out), "name": name, "version": version,
           "precision": bundle.manifest.precision,
           "checksum": bundle.manifest.checksum}
    _emit(args, doc, f"wrote {out} ({name} {version}, {bundle.manifest.precision})")
    return 0


def cmd_upload(args) -> int:
    try:
        data = Path(args.bundle).read_bytes()
    except OSError as e:
        raise UsageError(f"cannot read bundle {args.bundle}: {e}") from None
    summary = RegistryClient(args.registry_url).upload_artifact(data)
    _emit(args, summary,
          f"uploaded {summary['name']} {summary['version']} "
          f"({summary['precision']}, {summary['byte_size']} bytes)")
    return 0


def cmd_list(args) -> int:
    artifacts = RegistryClient(args.registry_url).list_artifacts()
    human = _table(
        ["name", "version", "precision", "bytes", "checksum", "created"],
        [[a["name"], a["version"], a["precision"], a["byte_size"],
          a["checksum"][:12], a["created_at"]] for a in artifacts],
    )
    _emit(args, artifacts, human)
    return 0


def cmd_deploy(args) -> int:
    dep = RegistryClient(args.registry_url).create_deployment(
        args.device, args.name, args.version)
    _emit(args, dep,
          f"deployment {dep['deployment_id']} -> {args.device}: "
          f"{args.name} {args.version} [{dep['state']}]")
    return 0


def cmd_rollback(args) -> int:
    dep = RegistryClient(args.registry_url).rollback(args.device)
    _emit(args, dep,
          f"rollback {dep['deployment_id']} -> {args.device}: "
          f"{dep['artifact']['name']} {dep['artifact']['version']} [{dep['state']}]")
    return 0


def cmd_fleet_status(args) -> int:
    devices = RegistryClient(args.registry_url).list_devices()
    def slot(s):
        return f"{s['name']} {s['version']}" if s else "-"
    human = _table(
        ["device", "status", "active", "previous", "last heartbeat"],
        [[d["device_id"], d["status"], slot(d["active_artifact"]),
          slot(d["previous_artifact"]), d["last_heartbeat"]] for d in devices],
    )
    _emit(args, devices, human)
    return 0


def cmd_benchmark(args) -> int:
    inputs = {}
    for precision, path in (("fp32", args.fp32), ("int8-static", args.static),
                            ("int8-dynamic", args.dynamic)):
        if path:
            data, manifest, model = _read_bundle(path)
            inputs[precision] = BenchmarkInput(manifest, model, len(data))
    if "fp32" not in inputs:
        raise UsageError("benchmark needs --fp32 BUNDLE as the baseline")
    input_shape = inputs["fp32"].manifest.input_shape
    if args.images:
        dataset = _images_from_dir(args.images, input_shape)
    else:
        toy = generate_dataset(_toy_spec(args))
        count = min(args.samples, len(toy.test_images))
        dataset = list(images_to_inputs(toy.test_images[:count]))
    report = run_benchmark(inputs, dataset, runs=args.runs)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    if args.json:
        doc = {
            precision: {
                "runs": r.runs,
                "samples_per_run": r.samples_per_run,
                "mean_latency_ms": r.mean_latency_ms,
                "min_latency_ms": r.min_latency_ms,
                "max_latency_ms": r.max_latency_ms,
                "int_mul_adds": r.int_mul_adds,
                "float_mul_adds": r.float_mul_adds,
                "range_scans": r.range_scans,
                "model_bytes": r.model_bytes,
                "top1_agreement": r.top1_agreement,
            }
            for precision, r in report.results.items()
        }
        print(json.dumps(doc, indent=2))
    else:
        print(report.table())
    return 0


def cmd_infer_local(args) -> int:
    _, manifest, model = _read_bundle(args.bundle)
    try:
        image_bytes = Path(args.image).read_bytes()
    except OSError as e:
        raise UsageError(f"cannot read image {args.image}: {e}") from None
    result, _ = classify_image(model, manifest, image_bytes)
    print(json.dumps(result, indent=2))
    return 0


def cmd_serve(args) -> int:
    try:
        registry = Registry(RegistryConfig(data_dir=args.data_dir))
    except OSError as e:
        print(f"error: cannot use data dir {args.data_dir}: {e}", file=sys.stderr)
        return 1
    server = make_server(registry, host=args.host, port=args.port,
                         console_dir=args.console_dir)
    host, port = server.server_address[:2]
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever(poll_interval=0.2)
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_agent(args) -> int:
    listen = _parse_listen(args.listen) if args.listen else None
    base = AgentConfig(
        registry_url=args.registry_url,
        device_id=args.device_id,
        install_root=args.install_root,
        poll_interval=args.poll_interval,
        listen=listen,
        forward_samples=args.forward_samples,
        hardware_profile=args.hardware_profile,
    )
    agents = [EdgeAgent(cfg) for cfg in fleet_configs(base, args.count)]
    for agent in agents:
        agent.start()
        where = (f", inference on {agent.listen_port}"
                 if agent.listen_port is not None else "")
        print(f"agent {agent.config.device_id} polling "
              f"{agent.config.registry_url}{where}", flush=True)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        for agent in agents:
            agent.stop()
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgefleet",
        description="Train, quantize, package, deploy, and benchmark small "
                    "image classifiers across a simulated edge fleet.",
    )
    parser.add_argument("--registry-url", default=DEFAULT_REGISTRY_URL,
                        help=f"registry base URL (default {DEFAULT_REGISTRY_URL})")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable output")
    parser.add_argument("--seed", type=int, default=42,
                        help="PRNG seed for toy data (default 42)")

    # the same flags are accepted after the subcommand; SUPPRESS keeps an
    # unset late flag from clobbering the value parsed at the top level
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--registry-url", default=argparse.SUPPRESS)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", parents=[common],
                       help="train the synthetic-pattern classifier")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--train-per-class", type=int, default=200)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--image-size", default="28x28", help="HxW, single channel")
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--lr", type=float, default=0.3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--name", default="toy-classifier")
    p.add_argument("--version", default="1.0.0")
    p.add_argument("--confidence-floor", type=float, default=0.5)
    p.add_argument("--out", help="output bundle path")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("quantize", parents=[common],
                       help="post-training int8 quantization of an fp32 bundle")
    p.add_argument("bundle")
    p.add_argument("--mode", choices=("static", "dynamic"), required=True)
    p.add_argument("--calibration", help="directory of .ppm/.pgm samples")
    p.add_argument("--calibration-toy", action="store_true",
                   help="calibrate on the toy training set for --seed")
    p.add_argument("--version", help="output version (default: patch bump)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("pack", parents=[common],
                       help="rewrite a bundle's manifest (name/version/map)")
    p.add_argument("bundle")
    p.add_argument("--name")
    p.add_argument("--version")
    p.add_argument("--condition-map", help="label=COND[,label=COND...]")
    p.add_argument("--confidence-floor", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("upload", parents=[common], help="upload a bundle")
    p.add_argument("bundle")
    p.set_defaults(func=cmd_upload)

    p = sub.add_parser("list", parents=[common], help="list repository artifacts")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("deploy", parents=[common],
                       help="deploy an artifact version to a device")
    p.add_argument("--device", required=True)
    p.add_argument("name")
    p.add_argument("version")
    p.set_defaults(func=cmd_deploy)

    p = sub.add_parser("rollback", parents=[common],
                       help="roll a device back to its previous artifact")
    p.add_argument("--device", required=True)
    p.set_defaults(func=cmd_rollback)

    p = sub.add_parser("fleet-status", parents=[common],
                       help="show devices, health, and active versions")
    p.set_defaults(func=cmd_fleet_status)

    p = sub.add_parser("benchmark", parents=[common],
                       help="latency/cost comparison across precisions")
    p.add_argument("--fp32", required=True, help="fp32 baseline bundle")
    p.add_argument("--static", help="int8-static bundle")
    p.add_argument("--dynamic", help="int8-dynamic bundle")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--samples", type=int, default=10,
                   help="toy test images to use when --images is not given")
    p.add_argument("--images", help="directory of .ppm/.pgm inputs")
    p.add_argument("--csv", help="also write per-inference rows to this file")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("infer-local", parents=[common],
                       help="run one image through a bundle, no registry")
    p.add_argument("bundle")
    p.add_argument("image")
    p.set_defaults(func=cmd_infer_local)

    p = sub.add_parser("serve", parents=[common], help="run the registry server")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--console-dir", help="static files for the web console")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("agent", parents=[common], help="run edge device agent(s)")
    p.add_argument("--device-id", required=True)
    p.add_argument("--install-root", required=True)
    p.add_argument("--poll-interval", type=float, default=30.0)
    p.add_argument("--listen", help="HOST:PORT for the local inference endpoint")
    p.add_argument("--forward-samples", action="store_true",
                   help="forward undecodable images as training samples")
    p.add_argument("--count", type=int, default=1,
                   help="simulated fleet size (device ids get -1..-N suffixes)")
    p.add_argument("--hardware-profile", default="simulated")
    p.set_defaults(func=cmd_agent)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ApiError, ConnectionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (IntegrityError, ParseError, ManifestError, ImageFormatError,
            CalibrationError, BenchmarkError, TrainingError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
