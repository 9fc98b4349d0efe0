/** Minimal URDF reader: links (mass + collision geometry) and revolute
 * joints (parent/child, origin, axis, limits). Covers what the bundled
 * robot model uses; unknown geometry kinds are rejected loudly. */

import * as fs from "fs";
import { XMLParser } from "fast-xml-parser";

export type Vec3 = [number, number, number];

export interface Geometry {
  kind: "box" | "sphere" | "cylinder";
  /** box: full extents; sphere: [r]; cylinder: [length, radius] */
  dims: number[];
}

export interface LinkSpec {
  name: string;
  mass: number;
  /** collider offset within the link frame */
  origin: Vec3;
  geometry: Geometry;
}

export interface JointSpec {
  name: string;
  type: string;
  parent: string;
  child: string;
  origin: Vec3;
  axis: Vec3;
  lower: number;
  upper: number;
  effort: number;
  velocity: number;
}

export interface RobotSpec {
  name: string;
  links: Map<string, LinkSpec>;
  joints: JointSpec[];
}

function asArray<T>(v: T | T[] | undefined): T[] {
  if (v === undefined) return [];
  return Array.isArray(v) ? v : [v];
}

function parseVec3(s: string | undefined, fallback: Vec3 = [0, 0, 0]): Vec3 {
  if (!s) return fallback;
  const parts = s.trim().split(/\s+/).map(Number);
  if (parts.length !== 3 || parts.some((p) => !Number.isFinite(p))) {
    throw new Error(`invalid xyz triple: ${JSON.stringify(s)}`);
  }
  return [parts[0], parts[1], parts[2]];
}

function parseGeometry(geo: any, linkName: string): Geometry {
  if (geo?.box) return { kind: "box", dims: parseVec3(geo.box["@_size"]) as number[] };
  if (geo?.sphere) return { kind: "sphere", dims: [Number(geo.sphere["@_radius"])] };
  if (geo?.cylinder) {
    return {
      kind: "cylinder",
      dims: [Number(geo.cylinder["@_length"]), Number(geo.cylinder["@_radius"])],
    };
  }
  throw new Error(`link ${linkName}: unsupported collision geometry`);
}

export function parseUrdf(path: string): RobotSpec {
  const xml = fs.readFileSync(path, "utf-8");
  const parser = new XMLParser({ ignoreAttributes: false, attributeNamePrefix: "@_" });
  const doc = parser.parse(xml);
  const robot = doc.robot;
  if (!robot) throw new Error(`${path}: no <robot> element`);

  const links = new Map<string, LinkSpec>();
  for (const link of asArray<any>(robot.link)) {
    const name = link["@_name"];
    const mass = Number(link.inertial?.mass?.["@_value"] ?? 0);
    if (!(mass > 0)) throw new Error(`link ${name}: missing positive mass`);
    const collision = link.collision;
    if (!collision) throw new Error(`link ${name}: missing collision element`);
    links.set(name, {
      name,
      mass,
      origin: parseVec3(link.inertial?.origin?.["@_xyz"]),
      geometry: parseGeometry(collision.geometry, name),
    });
  }

  const joints: JointSpec[] = [];
  for (const joint of asArray<any>(robot.joint)) {
    const name = joint["@_name"];
    if (joint["@_type"] !== "revolute") {
      throw new Error(`joint ${name}: only revolute joints are supported`);
    }
    const limit = joint.limit ?? {};
    joints.push({
      name,
      type: joint["@_type"],
      parent: joint.parent["@_link"],
      child: joint.child["@_link"],
      origin: parseVec3(joint.origin?.["@_xyz"]),
      axis: parseVec3(joint.axis?.["@_xyz"], [1, 0, 0]),
      lower: Number(limit["@_lower"] ?? -Math.PI),
      upper: Number(limit["@_upper"] ?? Math.PI),
      effort: Number(limit["@_effort"] ?? 30),
      velocity: Number(limit["@_velocity"] ?? 6),
    });
  }

  for (const j of joints) {
    if (!links.has(j.parent)) throw new Error(`joint ${j.name}: unknown parent ${j.parent}`);
    if (!links.has(j.child)) throw new Error(`joint ${j.name}: unknown child ${j.child}`);
  }
  return { name: robot["@_name"] ?? "robot", links, joints };
}
