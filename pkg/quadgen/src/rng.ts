/**
 * Seeded 64-bit PRNG (xoshiro256**), BigInt arithmetic.
 *
 * The command stream must be reproducible from the seed alone, independent of
 * the physics engine version, so sampling never consults simulation state.
 *
 * Constants: splitmix64 gamma 0x9E3779B97F4A7C15 with mix multipliers
 * 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB; xoshiro256** scrambler
 * rotl(s1 * 5, 7) * 9, shift 17, rotation 45. Doubles are (x >> 11) * 2^-53.
 */

const MASK = (1n << 64n) - 1n;

function rotl(x: bigint, k: bigint): bigint {
  return ((x << k) | (x >> (64n - k))) & MASK;
}

export class SplitMix64 {
  private state: bigint;

  constructor(seed: bigint) {
    this.state = seed & MASK;
  }

  next(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK;
    return z ^ (z >> 31n);
  }
}

export class Xoshiro256 {
  private s0: bigint;
  private s1: bigint;
  private s2: bigint;
  private s3: bigint;

  constructor(seed: number | bigint) {
    const sm = new SplitMix64(BigInt(seed));
    this.s0 = sm.next();
    this.s1 = sm.next();
    this.s2 = sm.next();
    this.s3 = sm.next();
  }

  nextU64(): bigint {
    const result = (rotl((this.s1 * 5n) & MASK, 7n) * 9n) & MASK;
    const t = (this.s1 << 17n) & MASK;
    this.s2 ^= this.s0;
    this.s3 ^= this.s1;
    this.s1 ^= this.s2;
    this.s0 ^= this.s3;
    this.s2 ^= t;
    this.s3 = rotl(this.s3, 45n);
    return result;
  }

  /** Uniform double on [0, 1) with 53 random bits. */
  nextDouble(): number {
    return Number(this.nextU64() >> 11n) * 2 ** -53;
  }

  uniform(lo: number, hi: number): number {
    return lo + (hi - lo) * this.nextDouble();
  }
}
