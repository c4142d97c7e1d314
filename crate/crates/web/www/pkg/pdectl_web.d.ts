/* tslint:disable */
/* eslint-disable */

/**
 * Largest delay keeping s² + x₁s + (x₂s + x₃)e^{-hs} stable.
 */
export function delay_margin(x1: number, x2: number, x3: number): string;

/**
 * Fixture controller names available for a plant.
 */
export function fixtures(plant: string): string;

/**
 * Certified Nyquist test of a fixture loop, with the sampled polygon.
 */
export function nyquist_check(plant: string, name: string, q: number): string;

/**
 * Energy curve of a closed-loop simulation; an empty name runs the open loop.
 */
export function simulate(plant: string, name: string, q: number, t_end: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly delay_margin: (a: number, b: number, c: number) => [number, number];
    readonly fixtures: (a: number, b: number) => [number, number];
    readonly nyquist_check: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly simulate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
