#!/usr/bin/env node
/** quadgen --urdf PATH --steps N --seed S --out PATH */

import * as path from "path";
import { collect } from "./collect";

function usage(): never {
  process.stderr.write("usage: quadgen --urdf PATH --steps N --seed S --out PATH\n");
  process.exit(1);
}

function parseArgs(argv: string[]): { urdf: string; steps: number; seed: number; out: string } {
  const args: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || argv[i + 1] === undefined) usage();
    args[key.slice(2)] = argv[i + 1];
  }
  const known = new Set(["urdf", "steps", "seed", "out"]);
  for (const key of Object.keys(args)) {
    if (!known.has(key)) usage();
  }
  if (!args.urdf || !args.steps || args.seed === undefined || !args.out) usage();
  const steps = Number(args.steps);
  const seed = Number(args.seed);
  if (!Number.isInteger(steps) || steps < 1 || !Number.isInteger(seed)) usage();
  return { urdf: args.urdf, steps, seed, out: args.out };
}

export async function main(argv: string[]): Promise<number> {
  const { urdf, steps, seed, out } = parseArgs(argv);
  process.stderr.write(
    JSON.stringify({ command: "quadgen", urdf: path.resolve(urdf), steps, seed, out }) + "\n",
  );
  try {
    const summary = await collect(urdf, steps, seed, out);
    process.stdout.write(
      `wrote ${summary.steps} records (d_obs=${summary.dObs}, d_ctrl=${summary.dCtrl}, ` +
        `${summary.resets} episode resets) to ${out}\n`,
    );
    return 0;
  } catch (err) {
    process.stderr.write(`quadgen: ${err instanceof Error ? err.message : err}\n`);
    return 2;
  }
}

if (require.main === module) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
