/* tslint:disable */
/* eslint-disable */

/**
 * A synthetic dataset plus a model being trained on it.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    epoch(): number;
    /**
     * Forward pass on one window: class probabilities, temporal pooling
     * weights, SE gate and the first layer's attention maps.
     */
    inspect(index: number): string;
    /**
     * Fresh synthetic data with `classes` activity profiles and an untrained model.
     */
    constructor(classes: number, seed: bigint);
    numSamples(): number;
    /**
     * Runs `epochs` passes over the training split and returns one record
     * per epoch: `{epoch, train_loss, val_loss, val_accuracy}`.
     */
    train(epochs: number): string;
    /**
     * `{label, class, x: [[ax, ay, az], ...]}` for one normalized window.
     */
    window(index: number): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_epoch: (a: number) => number;
    readonly demo_inspect: (a: number, b: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: bigint) => [number, number, number];
    readonly demo_numSamples: (a: number) => number;
    readonly demo_train: (a: number, b: number) => [number, number, number, number];
    readonly demo_window: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
