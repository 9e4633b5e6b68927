/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_epoch: (a: number) => number;
export const demo_inspect: (a: number, b: number) => [number, number, number, number];
export const demo_new: (a: number, b: bigint) => [number, number, number];
export const demo_numSamples: (a: number) => number;
export const demo_train: (a: number, b: number) => [number, number, number, number];
export const demo_window: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
