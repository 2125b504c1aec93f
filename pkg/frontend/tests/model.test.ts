import { describe, expect, it } from "vitest";
import { argmaxWithTies, assertDistribution, isValidMessage, isValidSymbol } from "../src/model.js";

describe("argmaxWithTies", () => {
  it("finds a clear winner without a tie", () => {
    expect(argmaxWithTies([0.1, 0.7, 0.2])).toEqual({ index: 1, tie: false });
  });

  it("breaks exact ties toward the lowest index and flags them", () => {
    expect(argmaxWithTies([0.2, 0.2, 0.2, 0.2, 0.2])).toEqual({ index: 0, tie: true });
  });

  it("flags a two-way tie that excludes the rest", () => {
    expect(argmaxWithTies([0.1, 0.4, 0.4, 0.1])).toEqual({ index: 1, tie: true });
  });

  it("rejects an empty vector", () => {
    expect(() => argmaxWithTies([])).toThrow();
  });
});

describe("assertDistribution", () => {
  it("accepts a clean distribution", () => {
    expect(() => assertDistribution([0.5, 0.25, 0.25], 3)).not.toThrow();
  });

  it("tolerates float dust around one", () => {
    expect(() => assertDistribution([0.5, 0.5 + 4e-7], 2)).not.toThrow();
  });

  it("rejects a sum away from one", () => {
    expect(() => assertDistribution([0.4, 0.4], 2)).toThrow(/sum/);
  });

  it("rejects the wrong candidate count", () => {
    expect(() => assertDistribution([1], 5)).toThrow(/expected 5/);
  });

  it("rejects out-of-range entries even when they cancel", () => {
    expect(() => assertDistribution([1.5, -0.5], 2)).toThrow(/outside/);
  });
});

describe("symbol validation", () => {
  const alpha = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";

  it("accepts single in-vocabulary characters", () => {
    expect(isValidSymbol("A", alpha)).toBe(true);
    expect(isValidSymbol("Z", alpha)).toBe(true);
  });

  it("rejects out-of-vocabulary and multi-character input", () => {
    expect(isValidSymbol("@", alpha)).toBe(false);
    expect(isValidSymbol("a", alpha)).toBe(false);
    expect(isValidSymbol("AB", alpha)).toBe(false);
    expect(isValidSymbol("", alpha)).toBe(false);
  });

  it("validates whole messages", () => {
    expect(isValidMessage("MUMU", alpha)).toBe(true);
    expect(isValidMessage("MU MU", alpha)).toBe(false);
    expect(isValidMessage("", alpha)).toBe(false);
  });
});
