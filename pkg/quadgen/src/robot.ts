/**
 * Rapier-backed articulated robot built from a parsed URDF.
 *
 * Actuation convention: joints named *_abd run under position control within
 * their model-file limits; every other revolute joint runs under velocity
 * control. Episodes that tip the trunk past 60 degrees of roll or pitch are
 * reset to the initial pose (stand-in for the widened, untippable base).
 */

import RAPIER from "@dimforge/rapier3d-compat";
import { JointSpec, RobotSpec, Vec3 } from "./urdf";

const GROUND_GROUP = 0x0001_ffff; // membership 1, collides with everything
const ROBOT_GROUP = 0x0002_0001; // membership 2, collides with ground only

export const PHYSICS_SUBSTEPS = 10;
export const CONTROL_DT = 0.075;

type Quat = { x: number; y: number; z: number; w: number };

function quatConj(q: Quat): Quat {
  return { x: -q.x, y: -q.y, z: -q.z, w: q.w };
}

function quatMul(a: Quat, b: Quat): Quat {
  return {
    w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
    x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
    y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
    z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
  };
}

function quatRotate(q: Quat, v: Vec3): Vec3 {
  const p: Quat = { x: v[0], y: v[1], z: v[2], w: 0 };
  const r = quatMul(quatMul(q, p), quatConj(q));
  return [r.x, r.y, r.z];
}

interface ActuatedJoint {
  spec: JointSpec;
  joint: RAPIER.RevoluteImpulseJoint;
  parent: RAPIER.RigidBody;
  child: RAPIER.RigidBody;
  positionControlled: boolean;
}

export interface QuadRobot {
  world: RAPIER.World;
  trunk: RAPIER.RigidBody;
  joints: ActuatedJoint[];
  reset(): void;
  applyCommands(commands: Float64Array | number[]): void;
  holdPose(): void;
  stepControlPeriod(): void;
  observe(out: Float32Array, offset: number): void;
  tipped(): boolean;
  dObs: number;
}

function colliderFor(link: {
  geometry: { kind: string; dims: number[] };
  origin: Vec3;
  mass: number;
}) {
  const g = link.geometry;
  let desc: RAPIER.ColliderDesc;
  if (g.kind === "box") {
    desc = RAPIER.ColliderDesc.cuboid(g.dims[0] / 2, g.dims[1] / 2, g.dims[2] / 2);
  } else if (g.kind === "sphere") {
    desc = RAPIER.ColliderDesc.ball(g.dims[0]);
  } else {
    // cylinder of (length, radius), modeled as a capsule along local y; the
    // bottom cap doubles as the foot
    const [length, radius] = g.dims;
    desc = RAPIER.ColliderDesc.capsule(Math.max(length / 2 - radius, 0.01), radius);
  }
  return desc
    .setTranslation(link.origin[0], link.origin[1], link.origin[2])
    .setCollisionGroups(ROBOT_GROUP)
    .setFriction(0.9)
    .setMass(link.mass);
}

export async function buildRobot(spec: RobotSpec, standHeight = 0.49): Promise<QuadRobot> {
  await RAPIER.init();
  const world = new RAPIER.World({ x: 0, y: -9.81, z: 0 });
  world.timestep = CONTROL_DT / PHYSICS_SUBSTEPS;

  const ground = RAPIER.ColliderDesc.cuboid(50, 0.5, 50)
    .setTranslation(0, -0.5, 0)
    .setCollisionGroups(GROUND_GROUP)
    .setFriction(0.9);
  world.createCollider(ground);

  const children = new Set(spec.joints.map((j) => j.child));
  const rootName = [...spec.links.keys()].find((name) => !children.has(name));
  if (!rootName) throw new Error("no root link (kinematic loop?)");

  // accumulate world positions down the tree, starting the root at standHeight
  const worldPos = new Map<string, Vec3>([[rootName, [0, standHeight, 0]]]);
  const pending = [...spec.joints];
  while (pending.length) {
    const j = pending.shift()!;
    const parentPos = worldPos.get(j.parent);
    if (!parentPos) {
      pending.push(j);
      continue;
    }
    worldPos.set(j.child, [
      parentPos[0] + j.origin[0],
      parentPos[1] + j.origin[1],
      parentPos[2] + j.origin[2],
    ]);
  }

  const bodies = new Map<string, RAPIER.RigidBody>();
  for (const [name, link] of spec.links) {
    const pos = worldPos.get(name);
    if (!pos) throw new Error(`link ${name} is not connected to the root`);
    const body = world.createRigidBody(
      RAPIER.RigidBodyDesc.dynamic().setTranslation(pos[0], pos[1], pos[2]),
    );
    world.createCollider(colliderFor(link), body);
    bodies.set(name, body);
  }

  const joints: ActuatedJoint[] = [];
  for (const j of spec.joints) {
    const parent = bodies.get(j.parent)!;
    const child = bodies.get(j.child)!;
    const jd = RAPIER.JointData.revolute(
      { x: j.origin[0], y: j.origin[1], z: j.origin[2] },
      { x: 0, y: 0, z: 0 },
      { x: j.axis[0], y: j.axis[1], z: j.axis[2] },
    );
    const joint = world.createImpulseJoint(jd, parent, child, true) as
      RAPIER.RevoluteImpulseJoint;
    joint.setLimits(j.lower, j.upper);
    // the default acceleration-based motor cannot hold the trunk's weight
    // through the light leg links; force-based motors respect the effort cap
    joint.configureMotorModel(RAPIER.MotorModel.ForceBased);
    joint.setMotorMaxForce(j.effort);
    joints.push({
      spec: j,
      joint,
      parent,
      child,
      positionControlled: j.name.endsWith("_abd"),
    });
  }

  const initial = [...bodies.values()].map((b) => ({
    body: b,
    pos: { ...b.translation() },
    rot: { ...b.rotation() },
  }));

  const trunk = bodies.get(rootName)!;

  function jointAngle(a: ActuatedJoint): number {
    const rel = quatMul(quatConj(a.parent.rotation() as Quat), a.child.rotation() as Quat);
    const proj = rel.x * a.spec.axis[0] + rel.y * a.spec.axis[1] + rel.z * a.spec.axis[2];
    let angle = 2 * Math.atan2(proj, rel.w);
    if (angle > Math.PI) angle -= 2 * Math.PI;
    if (angle < -Math.PI) angle += 2 * Math.PI;
    return angle;
  }

  function jointVelocity(a: ActuatedJoint): number {
    const axisWorld = quatRotate(a.parent.rotation() as Quat, a.spec.axis);
    const wp = a.parent.angvel();
    const wc = a.child.angvel();
    return (
      (wc.x - wp.x) * axisWorld[0] + (wc.y - wp.y) * axisWorld[1] + (wc.z - wp.z) * axisWorld[2]
    );
  }

  return {
    world,
    trunk,
    joints,
    dObs: 13 + 2 * joints.length,

    reset() {
      for (const s of initial) {
        s.body.setTranslation(s.pos, true);
        s.body.setRotation(s.rot, true);
        s.body.setLinvel({ x: 0, y: 0, z: 0 }, true);
        s.body.setAngvel({ x: 0, y: 0, z: 0 }, true);
      }
    },

    applyCommands(commands) {
      if (commands.length !== joints.length) {
        throw new Error(`expected ${joints.length} commands, got ${commands.length}`);
      }
      joints.forEach((a, i) => {
        if (a.positionControlled) {
          a.joint.configureMotorPosition(commands[i], 400.0, 15.0);
        } else {
          a.joint.configureMotorVelocity(commands[i], 30.0);
        }
      });
    },

    holdPose() {
      // stiff position hold at the build pose; used to settle before data
      // collection starts
      for (const a of joints) a.joint.configureMotorPosition(0.0, 400.0, 15.0);
    },

    stepControlPeriod() {
      for (let k = 0; k < PHYSICS_SUBSTEPS; k++) world.step();
    },

    observe(out, offset) {
      const p = trunk.translation();
      const q = trunk.rotation();
      const lv = trunk.linvel();
      const av = trunk.angvel();
      const base = [p.x, p.y, p.z, q.x, q.y, q.z, q.w, lv.x, lv.y, lv.z, av.x, av.y, av.z];
      for (let i = 0; i < 13; i++) out[offset + i] = base[i];
      joints.forEach((a, i) => {
        out[offset + 13 + i] = jointAngle(a);
        out[offset + 13 + joints.length + i] = jointVelocity(a);
      });
    },

    tipped() {
      const up = quatRotate(trunk.rotation() as Quat, [0, 1, 0]);
      return up[1] < 0.5; // cos(60 deg)
    },
  };
}
