"""Command-line client for the service API.

Every subcommand talks HTTP to the service.  Without ``--server`` the app is
mounted in-process (no daemon needed); with ``--server URL`` the same
requests go to a running instance, so long experiments can be hosted on a
separate machine.

Exit codes: 0 success, 1 configuration error (HTTP 4xx or a bad local
config file), 2 runtime failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=httpx.Timeout(10.0, read=None))
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        click.echo(f"config file not found: {p}", err=True)
        sys.exit(EXIT_CONFIG)
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix.lower() in (".yaml", ".yml"):
            import yaml

            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except Exception as exc:
        click.echo(f"could not parse config file {p}: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if not isinstance(data, dict):
        click.echo(f"config file {p} must contain a mapping", err=True)
        sys.exit(EXIT_CONFIG)
    return data


def _set_nested(config: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = config
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def request(client, method: str, url: str, **kwargs) -> dict:
    try:
        resp = client.request(method, url, **kwargs)
    except httpx.HTTPError as exc:
        click.echo(f"request failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    if resp.status_code >= 500:
        click.echo(f"server error: {_detail(resp)}", err=True)
        sys.exit(EXIT_RUNTIME)
    if resp.status_code >= 400:
        click.echo(f"configuration error: {_detail(resp)}", err=True)
        sys.exit(EXIT_CONFIG)
    return resp.json()


def _detail(resp) -> str:
    try:
        return json.dumps(resp.json().get("detail"))
    except Exception:
        return resp.text


CONFIG_OPTIONS = [
    click.option("--config", "config_path", type=str, default=None, help="JSON or YAML run config."),
    click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                 help="Override a config field, dotted keys allowed (e.g. meta.total_iterations=100)."),
    click.option("--mode", type=click.Choice(["zero_shot", "few_shot"]), default=None),
    click.option("--seed", type=int, default=None),
    click.option("--num-seeds", type=int, default=None),
    click.option("--output-dir", type=str, default=None),
    click.option("--prompt", type=str, default=None),
    click.option("--lambda-c", type=float, default=None),
    click.option("--n-way", type=int, default=None),
    click.option("--k-shot", type=int, default=None),
    click.option("--iterations", type=int, default=None),
]


def with_config_options(fn):
    for opt in reversed(CONFIG_OPTIONS):
        fn = opt(fn)
    return fn


def build_config(config_path, overrides, **flags) -> dict:
    config = load_config_file(config_path)
    flat = {
        "mode": flags.get("mode"),
        "seed": flags.get("seed"),
        "num_seeds": flags.get("num_seeds"),
        "output_dir": flags.get("output_dir"),
        "prompt": flags.get("prompt"),
        "loss.lambda_c": flags.get("lambda_c"),
        "episode.n_way": flags.get("n_way"),
        "episode.k_shot": flags.get("k_shot"),
        "meta.total_iterations": flags.get("iterations"),
    }
    for dotted, value in flat.items():
        if value is not None:
            _set_nested(config, dotted, value)
    for item in overrides:
        if "=" not in item:
            click.echo(f"bad --set value {item!r}, expected KEY=VALUE", err=True)
            sys.exit(EXIT_CONFIG)
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_nested(config, key, value)
    return config


@click.group()
@click.option("--server", type=str, default=None, envvar="METAED_SERVER",
              help="Base URL of a running service; defaults to an in-process app.")
@click.pass_context
def main(ctx, server):
    """Zero- and few-shot event detection experiments."""
    ctx.obj = make_client(server)


@main.command()
@with_config_options
@click.option("--resume", is_flag=True, help="Continue from the last saved training state.")
@click.pass_obj
def train(client, config_path, overrides, resume, **flags):
    """Run meta-training and report test metrics."""
    config = build_config(config_path, overrides, **flags)
    payload = {"config": config, "resume": resume}
    report = request(client, "POST", "/train", json=payload)
    click.echo(f"output: {report['output_dir']}")
    click.echo("test metrics (mean +- std over seeds):")
    for key, value in report["test_mean"].items():
        click.echo(f"  {key:12s} {value:.4f} +- {report['test_std'][key]:.4f}")


@main.command()
@click.option("--checkpoint", required=True, type=str)
@click.option("--episodes", type=int, default=None)
@click.pass_obj
def eval(client, checkpoint, episodes):
    """Re-evaluate a saved checkpoint on its fixed test episodes."""
    result = request(client, "POST", "/eval", json={"checkpoint": checkpoint, "test_episodes": episodes})
    click.echo("test metrics:")
    for key, value in result["test"].items():
        click.echo(f"  {key:12s} {value:.4f}")


@main.command()
@with_config_options
@click.option("--parameter", required=True, type=click.Choice(["lambda_c", "prompt", "inner_steps", "k_shot"]))
@click.option("--values", required=True, type=str, help="Comma-separated values, e.g. 0,0.5,1.")
@click.pass_obj
def sweep(client, config_path, overrides, parameter, values, **flags):
    """Train once per parameter value with shared seeds."""
    config = build_config(config_path, overrides, **flags)
    parsed = []
    for chunk in values.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            parsed.append(json.loads(chunk))
        except json.JSONDecodeError:
            parsed.append(chunk)
    result = request(client, "POST", "/sweep", json={"config": config, "parameter": parameter, "values": parsed})
    if not result["rows"]:
        click.echo("no values given; nothing to do")
        return
    click.echo(f"sweep over {parameter}:")
    for row in result["rows"]:
        click.echo(f"  {row['value']!s:>8}  f1={row['f1']:.4f}  ami={row['ami']:.4f}  fm={row['fm']:.4f}")


@main.command()
@with_config_options
@click.option("--components", type=str, default=None,
              help="Comma-separated subset of trigger,verbalizer,meta_learner (default: all).")
@click.pass_obj
def ablate(client, config_path, overrides, components, **flags):
    """Train the full model and the requested ablation variants."""
    config = build_config(config_path, overrides, **flags)
    comps = [c.strip() for c in components.split(",") if c.strip()] if components else None
    result = request(client, "POST", "/ablate", json={"config": config, "components": comps})
    click.echo("ablation results:")
    for row in result["rows"]:
        click.echo(f"  {row['variant']:16s} f1={row['f1']:.4f} +- {row['f1_std']:.4f}")


@main.command("export-features")
@click.option("--checkpoint", required=True, type=str)
@click.option("--output", required=True, type=str)
@click.option("--episodes", type=int, default=None)
@click.pass_obj
def export_features_cmd(client, checkpoint, output, episodes):
    """Write 2-D projected query features with gold labels and cluster ids."""
    result = request(
        client, "POST", "/export-features",
        json={"checkpoint": checkpoint, "output": output, "episodes": episodes},
    )
    click.echo(f"wrote {result['rows']} rows to {result['path']}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the service with uvicorn."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
