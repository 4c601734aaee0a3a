/**
 * Wrap an external verifier invocation and normalize its verdict to the
 * campaign harness grammar (one line on stdout):
 *
 *     verified | falsified <v0> ... | unknown | error <message>
 *
 * Vocabulary mapping is token-based on the tool's output: holds/unsat ->
 * verified, sat/violated/falsified -> falsified (with witness extraction),
 * timeout/unknown -> unknown. The word "unsat" is checked before "sat".
 */

import { spawnSync } from "child_process";

export interface AdapterOutcome {
  line: string;
}

const VERIFIED_TOKENS = ["unsat", "verified", "holds", "proved", "safe"];
const FALSIFIED_TOKENS = ["sat", "falsified", "violated", "counterexample", "unsafe"];
const UNKNOWN_TOKENS = ["timeout", "timed out", "unknown"];

function hasToken(text: string, token: string): boolean {
  const re = new RegExp(`(^|[^a-z])${token}($|[^a-z])`, "i");
  return re.test(text);
}

/** Pull witness values out of tool output: either `(X_i v)` assignments or
 *  plain numbers following a falsified/counterexample marker line. */
export function extractWitness(text: string, dim: number): number[] | null {
  const assigns = new Map<number, number>();
  const re = /\(\s*X_(\d+)\s+(-?[0-9.eE+]+)\s*\)/g;
  for (const m of text.matchAll(re)) {
    assigns.set(Number(m[1]), Number(m[2]));
  }
  if (assigns.size === dim) {
    const out: number[] = [];
    for (let i = 0; i < dim; i++) {
      const v = assigns.get(i);
      if (v === undefined || !Number.isFinite(v)) return null;
      out.push(v);
    }
    return out;
  }
  for (const line of text.split("\n")) {
    const nums = line.trim().split(/[\s,;]+/).map(Number);
    if (nums.length === dim && nums.every(Number.isFinite)) return nums;
  }
  return null;
}

export function mapToolOutput(stdout: string, dim: number): string {
  const text = stdout.trim();
  if (!text) return "error tool produced no output";
  if (UNKNOWN_TOKENS.some((t) => hasToken(text, t))) return "unknown";
  if (VERIFIED_TOKENS.some((t) => hasToken(text, t))) return "verified";
  if (FALSIFIED_TOKENS.some((t) => hasToken(text, t))) {
    const w = extractWitness(text, dim);
    if (w) return "falsified " + w.map((v) => `${v}`).join(" ");
    return "error counterexample claimed but no witness parsed";
  }
  const snippet = text.split("\n").pop()!.slice(0, 120);
  return `error unparseable tool output: ${snippet}`;
}

export function runAdapter(commandTemplate: string[], onnxPath: string,
                           vnnlibPath: string, timeoutSec: number,
                           inputDim: number): AdapterOutcome {
  const argv = commandTemplate.map((a) =>
    a.replace("{model}", onnxPath)
      .replace("{property}", vnnlibPath)
      .replace("{timeout}", String(timeoutSec)));
  let res;
  try {
    res = spawnSync(argv[0], argv.slice(1), {
      timeout: timeoutSec * 1000,
      encoding: "utf8",
    });
  } catch (e) {
    return { line: `error ${(e as Error).message.slice(0, 120)}` };
  }
  if (res.error) {
    const err = res.error as NodeJS.ErrnoException;
    if (err.code === "ETIMEDOUT") return { line: "unknown" };
    return { line: `error ${err.message.slice(0, 120)}` };
  }
  if (res.signal) return { line: "unknown" }; // killed at the time limit
  return { line: mapToolOutput(res.stdout ?? "", inputDim) };
}
