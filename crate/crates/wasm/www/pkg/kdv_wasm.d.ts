/* tslint:disable */
/* eslint-disable */

/**
 * Physical values `u(t_r, x_c)` laid out row by row, one row per frame.
 */
export class Heatmap {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly cols: number;
    readonly max: number;
    readonly min: number;
    readonly rows: number;
    readonly values: Float64Array;
}

/**
 * `‖u(t) − [u]‖₀` under one feedback law, with the fitted decay rate over
 * the second half of the run.
 */
export class NormCurve {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly norms: Float64Array;
    readonly rate: number;
    readonly times: Float64Array;
}

/**
 * Control profile samples and the observability constant of the Gramian
 * restricted to `1 ≤ |k| ≤ band`.
 */
export class Observability {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly delta: number;
    readonly g: Float64Array;
    readonly x: Float64Array;
}

export function normCurve(law: string, lambda: number, amplitude: number, horizon: number, n: number, dt: number): NormCurve;

export function observability(center: number, width: number, horizon: number, band: number, n: number): Observability;

export function spacetime(amplitude: number, mu: number, horizon: number, frames: number, damped: boolean, n: number): Heatmap;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_heatmap_free: (a: number, b: number) => void;
    readonly __wbg_normcurve_free: (a: number, b: number) => void;
    readonly __wbg_observability_free: (a: number, b: number) => void;
    readonly heatmap_cols: (a: number) => number;
    readonly heatmap_max: (a: number) => number;
    readonly heatmap_min: (a: number) => number;
    readonly heatmap_rows: (a: number) => number;
    readonly heatmap_values: (a: number) => [number, number];
    readonly normCurve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly normcurve_norms: (a: number) => [number, number];
    readonly normcurve_rate: (a: number) => number;
    readonly normcurve_times: (a: number) => [number, number];
    readonly observability: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly observability_delta: (a: number) => number;
    readonly observability_g: (a: number) => [number, number];
    readonly observability_x: (a: number) => [number, number];
    readonly spacetime: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
