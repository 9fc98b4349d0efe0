import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { describe, expect, it } from "vitest";
import { MAGIC, readDataset, writeDataset } from "../src/koopds";

function tmpFile(name: string): string {
  return path.join(fs.mkdtempSync(path.join(os.tmpdir(), "koopds-")), name);
}

function sampleDataset(n = 5, dObs = 3, dCtrl = 2) {
  const obs = new Float32Array(n * dObs);
  const controls = new Float32Array(n * dCtrl);
  for (let i = 0; i < obs.length; i++) obs[i] = Math.sin(i) * 3;
  for (let i = 0; i < controls.length; i++) controls[i] = Math.cos(i);
  return { dObs, dCtrl, dt: 0.075, obs, controls };
}

describe("KOOPDS1 writer", () => {
  it("emits the exact header layout", () => {
    const p = tmpFile("h.kds");
    writeDataset(p, sampleDataset(4));
    const buf = fs.readFileSync(p);
    expect(buf.subarray(0, 8).equals(MAGIC)).toBe(true);
    expect(buf.readUInt32LE(8)).toBe(3);
    expect(buf.readUInt32LE(12)).toBe(2);
    expect(Number(buf.readBigUInt64LE(16))).toBe(4);
    expect(buf.readDoubleLE(24)).toBe(0.075);
    expect(buf.length).toBe(32 + 4 * (3 + 2) * 4);
  });

  it("round-trips exactly", () => {
    const p = tmpFile("r.kds");
    const ds = sampleDataset(7);
    writeDataset(p, ds);
    const back = readDataset(p);
    expect(back.dObs).toBe(ds.dObs);
    expect(back.dCtrl).toBe(ds.dCtrl);
    expect(back.dt).toBe(ds.dt);
    expect(Array.from(back.obs)).toEqual(Array.from(ds.obs));
    expect(Array.from(back.controls)).toEqual(Array.from(ds.controls));
  });

  it("rejects inconsistent buffers", () => {
    const ds = sampleDataset(3);
    expect(() =>
      writeDataset(tmpFile("bad.kds"), { ...ds, controls: new Float32Array(5) }),
    ).toThrow(/disagree/);
  });

  it("rejects corrupted magic and truncation", () => {
    const p = tmpFile("c.kds");
    writeDataset(p, sampleDataset(3));
    const raw = fs.readFileSync(p);
    raw[0] ^= 0xff;
    fs.writeFileSync(p, raw);
    expect(() => readDataset(p)).toThrow(/magic/);
    raw[0] ^= 0xff;
    fs.writeFileSync(p, raw.subarray(0, raw.length - 3));
    expect(() => readDataset(p)).toThrow(/expected/);
  });
});
