/**
 * Random-control data collection: one observation + 12 commands per 0.075 s
 * control step, written as KOOPDS1. The command stream is a pure function of
 * the seed (drawn before consulting any simulation state), so it is stable
 * across physics-engine versions even though observations may not be.
 */

import { CONTROL_DT, QuadRobot, buildRobot } from "./robot";
import { Dataset, writeDataset } from "./koopds";
import { Xoshiro256 } from "./rng";
import { parseUrdf } from "./urdf";

const WARMUP_STEPS = 20;
const VELOCITY_LIMIT = 6.0; // rad/s command range for velocity actuators

export interface CollectSummary {
  steps: number;
  resets: number;
  dObs: number;
  dCtrl: number;
}

export function sampleCommands(robot: QuadRobot, rng: Xoshiro256, out: Float64Array): void {
  robot.joints.forEach((a, i) => {
    out[i] = a.positionControlled
      ? rng.uniform(a.spec.lower, a.spec.upper)
      : rng.uniform(-VELOCITY_LIMIT, VELOCITY_LIMIT);
  });
}

export async function collect(
  urdfPath: string,
  nSteps: number,
  seed: number,
  outPath: string,
): Promise<CollectSummary> {
  if (nSteps < 1) throw new Error("steps must be >= 1");
  const spec = parseUrdf(urdfPath);
  const robot = await buildRobot(spec);
  const dObs = robot.dObs;
  const dCtrl = robot.joints.length;
  const rng = new Xoshiro256(seed);

  // settle into a stand (stiff position hold) before recording
  robot.holdPose();
  for (let i = 0; i < WARMUP_STEPS; i++) robot.stepControlPeriod();

  const obs = new Float32Array(nSteps * dObs);
  const controls = new Float32Array(nSteps * dCtrl);
  const commands = new Float64Array(dCtrl);
  let resets = 0;

  for (let t = 0; t < nSteps; t++) {
    sampleCommands(robot, rng, commands);
    try {
      robot.observe(obs, t * dObs);
      for (let j = 0; j < dCtrl; j++) controls[t * dCtrl + j] = commands[j];
      robot.applyCommands(commands);
      robot.stepControlPeriod();
    } catch (err) {
      throw new Error(`engine failure at step ${t}: ${err}`);
    }
    for (let j = 0; j < dObs; j++) {
      if (!Number.isFinite(obs[t * dObs + j])) {
        throw new Error(`non-finite observation at step ${t}, component ${j}`);
      }
    }
    if (robot.tipped()) {
      robot.reset();
      resets += 1;
    }
  }

  const ds: Dataset = { dObs, dCtrl, dt: CONTROL_DT, obs, controls };
  writeDataset(outPath, ds);
  return { steps: nSteps, resets, dObs, dCtrl };
}
