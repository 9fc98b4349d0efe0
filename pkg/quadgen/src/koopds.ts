/**
 * KOOPDS1 dataset file: little-endian
 *   magic "KOOPDS1\0" | u32 d_obs | u32 d_ctrl | u64 n | f64 dt |
 *   n records of d_obs f32 observations followed by d_ctrl f32 controls.
 */

import * as fs from "fs";

export const MAGIC = Buffer.from("KOOPDS1\0", "latin1");
const HEADER_BYTES = 8 + 4 + 4 + 8 + 8;

export interface Dataset {
  dObs: number;
  dCtrl: number;
  dt: number;
  /** row-major [n][dObs] */
  obs: Float32Array;
  /** row-major [n][dCtrl] */
  controls: Float32Array;
}

export function datasetLength(ds: Dataset): number {
  return ds.obs.length / ds.dObs;
}

export function writeDataset(path: string, ds: Dataset): void {
  const n = datasetLength(ds);
  if (!Number.isInteger(n) || ds.controls.length !== n * ds.dCtrl) {
    throw new Error("observation/control buffers disagree with the declared dims");
  }
  const buf = Buffer.alloc(HEADER_BYTES + n * (ds.dObs + ds.dCtrl) * 4);
  MAGIC.copy(buf, 0);
  buf.writeUInt32LE(ds.dObs, 8);
  buf.writeUInt32LE(ds.dCtrl, 12);
  buf.writeBigUInt64LE(BigInt(n), 16);
  buf.writeDoubleLE(ds.dt, 24);
  let at = HEADER_BYTES;
  for (let t = 0; t < n; t++) {
    for (let j = 0; j < ds.dObs; j++, at += 4) {
      buf.writeFloatLE(ds.obs[t * ds.dObs + j], at);
    }
    for (let j = 0; j < ds.dCtrl; j++, at += 4) {
      buf.writeFloatLE(ds.controls[t * ds.dCtrl + j], at);
    }
  }
  fs.writeFileSync(path, buf);
}

export function readDataset(path: string): Dataset {
  const buf = fs.readFileSync(path);
  if (buf.length < 8 || !buf.subarray(0, 8).equals(MAGIC)) {
    throw new Error(`${path}: bad magic`);
  }
  const dObs = buf.readUInt32LE(8);
  const dCtrl = buf.readUInt32LE(12);
  const n = Number(buf.readBigUInt64LE(16));
  const dt = buf.readDoubleLE(24);
  const expected = HEADER_BYTES + n * (dObs + dCtrl) * 4;
  if (buf.length !== expected) {
    throw new Error(`${path}: expected ${expected} bytes, found ${buf.length}`);
  }
  const obs = new Float32Array(n * dObs);
  const controls = new Float32Array(n * dCtrl);
  let at = HEADER_BYTES;
  for (let t = 0; t < n; t++) {
    for (let j = 0; j < dObs; j++, at += 4) obs[t * dObs + j] = buf.readFloatLE(at);
    for (let j = 0; j < dCtrl; j++, at += 4) controls[t * dCtrl + j] = buf.readFloatLE(at);
  }
  return { dObs, dCtrl, dt, obs, controls };
}
