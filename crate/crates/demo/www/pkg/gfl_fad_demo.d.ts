/* tslint:disable */
/* eslint-disable */

/**
 * Metrics of Gaussian genuine and spoof score clouds.
 */
export class ScoreReport {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * False-alarm rate at each operating point.
     */
    far(): Float64Array;
    /**
     * Miss rate at each operating point, ascending threshold.
     */
    frr(): Float64Array;
    genuine(): Float64Array;
    spoof(): Float64Array;
    readonly eer: number;
    readonly min_tdcf: number;
    readonly threshold: number;
}

/**
 * Log-mel image, band-major.
 */
export class Spectrogram {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `values[band * frames + frame]`.
     */
    values(): Float64Array;
    readonly bands: number;
    readonly frames: number;
}

/**
 * Row-major `f_count x t_count` flags, 1 for masked patches.
 */
export function mask_pattern(f_count: number, t_count: number, ratio: number, policy: string, seed: number): Uint8Array;

/**
 * Genuine scores from `N(separation, 1)`, spoof scores from `N(0, 1)`.
 */
export function score_demo(separation: number, n_genuine: number, n_spoof: number, seed: number, c1: number, c2: number): ScoreReport;

/**
 * Log-mel spectrogram of one synthetic utterance. The genuine and spoof
 * clips of a seed come from the same corpus draw.
 */
export function synth_spectrogram(artifact: string, genuine: boolean, seed: number, duration_s: number, mel_bands: number): Spectrogram;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scorereport_free: (a: number, b: number) => void;
    readonly __wbg_spectrogram_free: (a: number, b: number) => void;
    readonly mask_pattern: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly score_demo: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly scorereport_eer: (a: number) => number;
    readonly scorereport_far: (a: number) => [number, number];
    readonly scorereport_frr: (a: number) => [number, number];
    readonly scorereport_genuine: (a: number) => [number, number];
    readonly scorereport_min_tdcf: (a: number) => number;
    readonly scorereport_spoof: (a: number) => [number, number];
    readonly scorereport_threshold: (a: number) => number;
    readonly spectrogram_bands: (a: number) => number;
    readonly spectrogram_frames: (a: number) => number;
    readonly spectrogram_values: (a: number) => [number, number];
    readonly synth_spectrogram: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
