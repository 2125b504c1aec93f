/** Pure domain rules shared by the controller and the renderers. */

export interface Highlight {
  index: number;
  tie: boolean;
}

/**
 * Index of the highest probability, ties broken toward the lowest
 * index to mirror the model's own argmax. `tie` flags that another
 * candidate is within epsilon of the winner, so the UI can mark the
 * highlight as shared rather than decisive.
 */
export function argmaxWithTies(probs: readonly number[], eps = 1e-9): Highlight {
  if (probs.length === 0) {
    throw new Error("empty probability vector");
  }
  let index = 0;
  let best = probs[0]!;
  for (let i = 1; i < probs.length; i++) {
    if (probs[i]! > best + eps) {
      best = probs[i]!;
      index = i;
    }
  }
  let tie = false;
  for (let i = 0; i < probs.length; i++) {
    if (i !== index && Math.abs(probs[i]! - best) <= eps) {
      tie = true;
      break;
    }
  }
  return { index, tie };
}

/**
 * Reject any probability vector that is not a distribution over the
 * candidate set. Called at render time: bars that fail this never
 * reach the screen.
 */
export function assertDistribution(probs: readonly number[], candidates: number): void {
  if (probs.length !== candidates) {
    throw new Error(`expected ${candidates} probabilities, got ${probs.length}`);
  }
  let sum = 0;
  for (const p of probs) {
    if (!Number.isFinite(p) || p < -1e-9 || p > 1 + 1e-9) {
      throw new Error(`probability ${p} outside [0, 1]`);
    }
    sum += p;
  }
  if (Math.abs(sum - 1) > 1e-6) {
    throw new Error(`probabilities sum to ${sum}, not 1`);
  }
}

export function isValidSymbol(ch: string, alphabet: string): boolean {
  return ch.length === 1 && alphabet.includes(ch);
}

export function isValidMessage(symbols: string, alphabet: string): boolean {
  return symbols.length > 0 && [...symbols].every((ch) => isValidSymbol(ch, alphabet));
}
