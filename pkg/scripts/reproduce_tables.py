"""Success-rate and undock mass-robustness tables for trained policies.

Usage::

    python scripts/reproduce_tables.py \\
        --policy curriculum=runs/<run>/policy.ffrl \\
        --policy no-curriculum=runs/<run>/policy.ffrl \\
        --policy more-mass-var=runs/<run>/policy.ffrl \\
        --out results

Writes ``success.txt``/``success.json`` (success percent per policy and mass
half-range, mean +/- std over seeds), ``undock_mse.txt``/``undock_mse.json``
(MSE of the x trace at -2 kg and -7 kg against the same controller at base
mass, PD baseline included) and per-figure plot CSVs under ``plot_data/``.
"""

import argparse
import json
import os

from ffrl.config import load_config
from ffrl.evaluate import (
    UNDOCK_DELTAS,
    PDController,
    PolicyController,
    format_mse_table,
    success_table,
    undock_mse_table,
    write_plot_data,
)
from ffrl.policy import load_policy

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--policy", action="append", required=True, metavar="NAME=PATH")
    ap.add_argument("--config", default=os.path.join(HERE, "..", "configs", "desk_curriculum.yaml"),
                    help="config whose eval section sets envs, seeds and tolerances")
    ap.add_argument("--out", default="results")
    ap.add_argument("--n-envs", type=int, help="override eval.n_envs")
    ap.add_argument("--include-pd", action="store_true", help="also tabulate PD success rates")
    args = ap.parse_args()

    cfg = load_config(args.config)
    ev = cfg.eval
    controllers = []
    for item in args.policy:
        name, _, path = item.partition("=")
        if not path:
            ap.error(f"--policy expects NAME=PATH, got {item!r}")
        controllers.append(PolicyController(load_policy(path), name=name))
    pd = PDController(f_max=cfg.env.f_max, tau_max=cfg.env.tau_max)
    os.makedirs(args.out, exist_ok=True)

    rated = controllers + ([pd] if args.include_pd else [])
    report = success_table(
        rated, args.n_envs or ev.n_envs, ev.seeds, mass_conditions=ev.mass_conditions,
        pos_R=ev.pos_R, ori_R=ev.ori_R, criterion=ev.criterion(), env_cfg=cfg.env,
    )
    with open(os.path.join(args.out, "success.txt"), "w") as f:
        f.write(report.to_table())
    with open(os.path.join(args.out, "success.json"), "w") as f:
        f.write(report.to_json())
    print(report.to_table())

    table, trajs = undock_mse_table([pd] + controllers, env_cfg=cfg.env)
    text = format_mse_table(table)
    with open(os.path.join(args.out, "undock_mse.txt"), "w") as f:
        f.write(text)
    with open(os.path.join(args.out, "undock_mse.json"), "w") as f:
        json.dump({n: {f"{d:+g}": v for d, v in row.items()} for n, row in table.items()}, f, indent=2)
    print(text)

    first = controllers[0].name
    payload = {f"{first}_dm{d:+g}": trajs[first][d] for d in UNDOCK_DELTAS}
    for p in write_plot_data(os.path.join(args.out, "plot_data"), trajs, payload):
        print(p)


if __name__ == "__main__":
    main()
