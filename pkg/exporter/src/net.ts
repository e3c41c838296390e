import * as tf from '@tensorflow/tfjs'
import { DstfLevel } from './dstf'

/**
 * Five-stage convolutional feature stack in the classic recognition-network
 * layout: 3x3 same-padded conv + relu per stage, 2x2 max pooling between
 * stages, so stage k runs at 1/2^(k-1) of the input resolution.
 *
 * Offline environments cannot fetch pretrained weights, so kernels default
 * to a fixed seeded He-scaled initialization (byte-reproducible everywhere);
 * a weights JSON file can swap in real filters without changing the format.
 */

export const STAGE_NAMES = ['relu1_1', 'relu2_1', 'relu3_1', 'relu4_1', 'relu5_1']
export const STAGE_CHANNELS = [16, 32, 64, 96, 128]

export interface NetOptions {
  seed?: number
  /** layer name -> flat kernel values (kh*kw*cin*cout, HWIO order) */
  weights?: Record<string, number[]>
}

/** Deterministic 32-bit PRNG (mulberry32). */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) >>> 0
    let t = a
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

function heKernel(
  rand: () => number,
  kh: number,
  kw: number,
  cin: number,
  cout: number,
): tf.Tensor4D {
  const n = kh * kw * cin * cout
  const std = Math.sqrt(2 / (kh * kw * cin))
  const values = new Float32Array(n)
  for (let i = 0; i < n; i += 2) {
    // Box-Muller; rand() is in [0, 1)
    const u = 1 - rand()
    const v = rand()
    const r = Math.sqrt(-2 * Math.log(u))
    values[i] = Math.fround(r * Math.cos(2 * Math.PI * v) * std)
    if (i + 1 < n) {
      values[i + 1] = Math.fround(r * Math.sin(2 * Math.PI * v) * std)
    }
  }
  return tf.tensor4d(values, [kh, kw, cin, cout])
}

export class FeatureNet {
  readonly kernels: Map<string, tf.Tensor4D>

  constructor(options: NetOptions = {}) {
    const rand = mulberry32(options.seed ?? 1234)
    this.kernels = new Map()
    let cin = 3
    STAGE_NAMES.forEach((name, i) => {
      const cout = STAGE_CHANNELS[i]
      const provided = options.weights?.[name]
      if (provided) {
        const expected = 3 * 3 * cin * cout
        if (provided.length !== expected) {
          throw new Error(
            `weights for ${name} have ${provided.length} values, expected ${expected}`,
          )
        }
        this.kernels.set(
          name,
          tf.tensor4d(Float32Array.from(provided), [3, 3, cin, cout]),
        )
      } else {
        this.kernels.set(name, heKernel(rand, 3, 3, cin, cout))
      }
      cin = cout
    })
  }

  validateLayers(layers: string[]): void {
    for (const layer of layers) {
      if (!STAGE_NAMES.includes(layer)) {
        throw new Error(
          `unknown layer ${JSON.stringify(layer)}; valid layers: ${STAGE_NAMES.join(', ')}`,
        )
      }
    }
  }

  /**
   * Run the stack on a [H, W, 3] image in [0, 1] and collect the requested
   * stage activations as DSTF levels (channel-major), ordered as requested.
   */
  extract(img: tf.Tensor3D, layers: string[]): DstfLevel[] {
    this.validateLayers(layers)
    const collected = new Map<string, DstfLevel>()
    tf.tidy(() => {
      let x = img.expandDims(0) as tf.Tensor4D
      STAGE_NAMES.forEach((name, i) => {
        x = tf.relu(tf.conv2d(x, this.kernels.get(name)!, 1, 'same'))
        if (layers.includes(name)) {
          const [, h, w, c] = x.shape
          // NHWC -> CHW for the channel-major payload
          const chw = tf.transpose(x.squeeze([0]), [2, 0, 1])
          collected.set(name, {
            channels: c,
            height: h,
            width: w,
            scaleNum: 1,
            scaleDen: 2 ** i,
            data: chw.dataSync<'float32'>().slice(),
          })
        }
        if (i + 1 < STAGE_NAMES.length) {
          x = tf.maxPool(x, 2, 2, 'same')
        }
      })
    })
    return layers.map(name => collected.get(name)!)
  }
}
