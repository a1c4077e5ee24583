"""
cli.py - The bpcs command.
==========================
  bpcs generate  [--horizon M --fph F --strength S --modes sif --seed N | --compact --tasks N] -o x.json
  bpcs solve     -i x.json [--features full --time-limit 180 --gamma G --alpha A] [-o sol.json] [--stats s.csv]
  bpcs simulate  -i x.json [--solution sol.json] [--scenarios 500 --seed N] [--histogram h.csv] [-o metrics.csv]
  bpcs compare   -i x.json [--scenarios 500 --gammas 0.5,0.7,0.9] [-o table.csv]
  bpcs saa       -i x.json [-i y.json ...] [--start 50 --step 50 --batches 25]

Solver options may also come from a --config file (.jsn, same keys as the long
flags). Explicit flags win over the file, the file wins over built-in defaults.
--debug N sets the logging level (0 warnings, 1 progress, 2 and up everything).

Exit codes: 0 success, 1 no feasible plan, 2 invalid input.
"""
import json
import logging
import optparse
import sys

import numpy as np
import pandas as pd

from bpcs import __version__, instance_gen, simulate
from bpcs.model import InstanceError, load_instance, load_solution, save_instance, save_solution
from bpcs.search import FEATURES, SolverConfig, solve

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_INVALID = 2

USAGE = """usage: bpcs COMMAND [options]

commands:
  generate   write a synthetic instance
  solve      solve an instance
  simulate   simulate a plan under sampled travel times
  compare    deterministic and stochastic plans side by side
  saa        choose the number of simulation scenarios

bpcs COMMAND --help lists the options of a command."""


def configure_logging(debug):
    level = logging.WARNING if debug <= 0 else logging.INFO if debug == 1 else logging.DEBUG
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    logging.getLogger().setLevel(level)


def _common(parser):
    parser.add_option("--debug", dest="debug", type="int", default=0, help="debug level")
    parser.add_option("--seed", dest="seed", type="int", default=0)


def _solver_options(parser):
    parser.add_option("-i", "--instance", dest="instance", action="append", default=[], help="instance file")
    parser.add_option("--config", dest="config", default=None, help="solver configuration file")
    parser.add_option("--features", dest="features", default=None, choices=list(FEATURES))
    parser.add_option("--time-limit", dest="time_limit", type="float", default=None)
    parser.add_option("--gamma", dest="gamma", type="float", default=None)
    parser.add_option("--alpha", dest="alpha", type="float", default=None)
    parser.add_option("--threads", dest="threads", type="int", default=None)


def solver_config(options):
    """defaults < config file < flags"""
    data = {}
    if options.config:
        with open(options.config, 'r') as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError('%s: configuration must be a JSON object' % options.config)
    if options.features:
        data['features'] = options.features
    config = SolverConfig.from_dict(data)
    return config.updated(time_limit=options.time_limit, gamma=options.gamma, alpha=options.alpha,
                          threads=options.threads, debuglevel=options.debug or None)


def _one_instance(options):
    if len(options.instance) != 1:
        raise ValueError('exactly one --instance is needed')
    return load_instance(options.instance[0])


def write_table(rows, path=None):
    """Rows (dicts) as CSV to `path`, or to stdout."""
    frame = pd.DataFrame(rows)
    if path:
        frame.to_csv(path, index=False)
    else:
        frame.to_csv(sys.stdout, index=False)
    return frame


def write_stats(result, instance_name, path, timings=False):
    return write_table([result.as_row(instance_name, timings)], path)


# ---------------------------------------------------------------------------
# Commands

def generate_parser():
    parser = optparse.OptionParser(usage="bpcs generate [options]")
    _common(parser)
    parser.add_option("--horizon", dest="horizon", type="int", default=60, help="minutes: 60, 90 or 120")
    parser.add_option("--fph", dest="fph", type="int", default=10, help="flights per hour: 10, 20 or 30")
    parser.add_option("--strength", dest="strength", type="float", default=0.6, help="worker strength")
    parser.add_option("--modes", dest="modes", default="sif", help="mode set: i, sf or sif")
    parser.add_option("--compact", dest="compact", action="store_true", default=False,
                      help="small random instance for cross-checks")
    parser.add_option("--tasks", dest="tasks", type="int", default=5)
    parser.add_option("--profiles", dest="profiles", type="int", default=2)
    parser.add_option("--levels", dest="levels", type="int", default=2)
    parser.add_option("--bins", dest="bins", type="int", default=2)
    parser.add_option("-o", "--output", dest="output", default=None, help="instance file (default NAME.json)")
    return parser


def do_generate(options):
    if options.compact:
        instance = instance_gen.generate_compact(options.seed, options.tasks, options.profiles, options.levels,
                                                 options.bins)
    else:
        instance = instance_gen.generate(options.horizon, options.fph, options.strength, options.modes,
                                         options.seed)
    path = options.output or '%s.json' % instance.name
    save_instance(instance, path)
    print('%s: %d tasks, %d profiles, workforce %s -> %s' % (instance.name, len(instance.tasks),
                                                            len(instance.profiles),
                                                            list(instance.workforce.per_level), path))
    return EXIT_OK


def solve_parser():
    parser = optparse.OptionParser(usage="bpcs solve -i x.json [options]")
    _common(parser)
    _solver_options(parser)
    parser.add_option("-o", "--output", dest="output", default=None, help="solution file")
    parser.add_option("--stats", dest="stats", default=None, help="statistics CSV file")
    parser.add_option("--timings", dest="timings", action="store_true", default=False,
                      help="add wall-clock columns to the statistics")
    parser.add_option("--dump-lp", dest="dump_lp", default=None, help="write the root master LP")
    return parser


def do_solve(options):
    instance = _one_instance(options)
    result = solve(instance, solver_config(options), dump_lp=options.dump_lp)
    print('%s: %s, objective %.6f, lower bound %.6f, gap %.4f%%, %d nodes'
          % (instance.name, result.status, result.upper_bound, result.lower_bound, 100.0 * result.gap,
             result.stats.nodes))
    if options.stats:
        write_stats(result, instance.name, options.stats, options.timings)
    if not result.feasible:
        print('**** No feasible plan found for', instance.name)
        return EXIT_INFEASIBLE
    if options.output:
        save_solution(result.solution, options.output)
    else:
        for col in result.solution.columns:
            print('  ' + col.describe())
    return EXIT_OK


def simulate_parser():
    parser = optparse.OptionParser(usage="bpcs simulate -i x.json [options]")
    _common(parser)
    _solver_options(parser)
    parser.add_option("--solution", dest="solution", default=None, help="plan to simulate (solved if absent)")
    parser.add_option("--scenarios", dest="scenarios", type="int", default=500)
    parser.add_option("--bin-policy", dest="bin_policy", default=simulate.REALIZED,
                      choices=[simulate.REALIZED, simulate.PLANNED])
    parser.add_option("--histogram", dest="histogram", default=None, help="delay histogram CSV file")
    parser.add_option("-o", "--output", dest="output", default=None, help="metrics CSV file")
    return parser


def do_simulate(options):
    instance = _one_instance(options)
    if options.solution:
        solution = load_solution(options.solution, instance)
    else:
        result = solve(instance, solver_config(options))
        if not result.feasible:
            print('**** No feasible plan to simulate for', instance.name)
            return EXIT_INFEASIBLE
        solution = result.solution
    rng = np.random.default_rng(options.seed)
    ev = simulate.evaluate(instance, solution, options.scenarios, rng, bin_policy=options.bin_policy)
    row = {'instance': instance.name, 'scenarios': options.scenarios, 'obj': ev.obj, 'obj_pen': ev.obj_pen,
           'sl_mean': ev.sl_mean, 'sl_std': ev.sl_std, 'sl_min': ev.sl_min, 'lfe_violation': ev.lfe_violation,
           'postponed': ev.postponed}
    write_table([row], options.output)
    if options.histogram:
        simulate.histogram_frame(ev.histogram).to_csv(options.histogram, index=False)
    return EXIT_OK


def compare_parser():
    parser = optparse.OptionParser(usage="bpcs compare -i x.json [options]")
    _common(parser)
    _solver_options(parser)
    parser.add_option("--scenarios", dest="scenarios", type="int", default=500)
    parser.add_option("--gammas", dest="gammas", default=None, help="comma separated, e.g. 0.5,0.7,0.9")
    parser.add_option("--evpi-scenarios", dest="evpi_scenarios", type="int", default=None,
                      help="scenarios solved with perfect information (default all)")
    parser.add_option("-o", "--output", dest="output", default=None, help="table CSV file")
    return parser


def parse_gammas(text):
    if not text:
        return None
    try:
        return [float(g) for g in text.split(',') if g.strip()]
    except ValueError:
        raise ValueError('--gammas wants comma separated probabilities, got %r' % (text,))


def do_compare(options):
    instance = _one_instance(options)
    rng = np.random.default_rng(options.seed)
    rows = simulate.compare(instance, options.scenarios, rng, solver_config(options), parse_gammas(options.gammas),
                            perfect_scenarios=options.evpi_scenarios)
    for row in rows:
        row['instance'] = instance.name
    write_table(rows, options.output)
    return EXIT_OK if any(row['feasible'] for row in rows) else EXIT_INFEASIBLE


def saa_parser():
    parser = optparse.OptionParser(usage="bpcs saa -i x.json [-i y.json ...] [options]")
    _common(parser)
    _solver_options(parser)
    parser.add_option("--start", dest="start", type="int", default=simulate.SAA_START)
    parser.add_option("--step", dest="step", type="int", default=simulate.SAA_STEP)
    parser.add_option("--batches", dest="batches", type="int", default=simulate.SAA_BATCHES)
    parser.add_option("--max-scenarios", dest="max_scenarios", type="int", default=simulate.SAA_MAX)
    return parser


def do_saa(options):
    if not options.instance:
        raise ValueError('at least one --instance is needed')
    config = solver_config(options)
    cases = []
    for path in options.instance:
        instance = load_instance(path)
        result = solve(instance, config)
        if result.feasible:
            cases.append((instance, result.solution))
        else:
            print('**** Skipping %s: no feasible plan' % instance.name)
    if not cases:
        return EXIT_INFEASIBLE
    n = simulate.saa_scenario_count(cases, options.start, options.batches, np.random.default_rng(options.seed),
                                    options.step, options.max_scenarios)
    print(n)
    return EXIT_OK


COMMANDS = {
    'generate': (generate_parser, do_generate),
    'solve': (solve_parser, do_solve),
    'simulate': (simulate_parser, do_simulate),
    'compare': (compare_parser, do_compare),
    'saa': (saa_parser, do_saa),
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] in ('-h', '--help'):
        print(USAGE)
        return EXIT_OK if argv else EXIT_INVALID
    if argv[0] == '--version':
        print('bpcs', __version__)
        return EXIT_OK
    command = argv[0]
    if command not in COMMANDS:
        print('**** Unknown command:', command)
        print(USAGE)
        return EXIT_INVALID
    make_parser, handler = COMMANDS[command]
    try:
        options, args = make_parser().parse_args(argv[1:])
    except SystemExit as e:
        # optparse exits 0 after --help and 2 on a bad flag
        return EXIT_OK if not e.code else EXIT_INVALID
    if args:
        print('**** Unexpected arguments:', ' '.join(args))
        return EXIT_INVALID
    configure_logging(options.debug)
    try:
        return handler(options)
    except (InstanceError, ValueError, KeyError, OSError) as e:
        print('**** %s failed: invalid input.' % command)
        print('... Reason:', e)
        return EXIT_INVALID


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
