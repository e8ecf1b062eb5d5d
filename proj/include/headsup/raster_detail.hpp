#pragma once

// Templated EWA splatting kernels. T=float is the production path (double
// accumulators inside), T=double exists for finite-difference verification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

#include "headsup/gaussians.hpp"

namespace headsup::raster {

template <typename T>
struct CameraT {
    T fx, fy, cx, cy;
    T r[9];  // world->camera rotation, row-major
    T t[3];
    T origin[3];  // camera center in world frame
    int width, height;
};

template <typename T>
CameraT<T> make_camera(const Camera& cam) {
    CameraT<T> c;
    c.fx = static_cast<T>(cam.fx());
    c.fy = static_cast<T>(cam.fy());
    c.cx = static_cast<T>(cam.cx());
    c.cy = static_cast<T>(cam.cy());
    Eigen::Matrix3d r = cam.rotation();
    Eigen::Vector3d t = cam.translation();
    Eigen::Vector3d o = cam.center();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) c.r[3 * i + j] = static_cast<T>(r(i, j));
        c.t[i] = static_cast<T>(t[i]);
        c.origin[i] = static_cast<T>(o[i]);
    }
    c.width = cam.width;
    c.height = cam.height;
    return c;
}

struct Config {
    int tile_size = 16;
    double alpha_cap = 0.999;
    double cutoff = 3.0;
    double near_clip = 1.0;  // mm
    int threads = 1;
};

constexpr double kCovLowPass = 0.3;   // px^2 added to the 2D covariance diagonal
constexpr double kMinTransmit = 1e-4; // front-to-back termination

template <typename T>
struct Splat {
    T mean2d[2];
    T conic[3];  // a, b, c of the inverse 2D covariance
    T depth;
    T rgb[3];
    T opacity;
    T radius;
    uint8_t valid;
};

// quaternion (w,x,y,z), not necessarily unit: normalized internally
template <typename T>
inline void quat_to_rot(const T q_in[4], T r[9], T q_unit[4], T* q_norm) {
    T n = std::sqrt(q_in[0] * q_in[0] + q_in[1] * q_in[1] + q_in[2] * q_in[2] + q_in[3] * q_in[3]);
    *q_norm = n;
    if (n < T(1e-12)) {
        q_unit[0] = T(1);
        q_unit[1] = q_unit[2] = q_unit[3] = T(0);
    } else {
        for (int k = 0; k < 4; ++k) q_unit[k] = q_in[k] / n;
    }
    T w = q_unit[0], x = q_unit[1], y = q_unit[2], z = q_unit[3];
    r[0] = 1 - 2 * (y * y + z * z);
    r[1] = 2 * (x * y - w * z);
    r[2] = 2 * (x * z + w * y);
    r[3] = 2 * (x * y + w * z);
    r[4] = 1 - 2 * (x * x + z * z);
    r[5] = 2 * (y * z - w * x);
    r[6] = 2 * (x * z - w * y);
    r[7] = 2 * (y * z + w * x);
    r[8] = 1 - 2 * (x * x + y * y);
}

// Projects one Gaussian: camera-frame mean, screen mean, 2D covariance,
// conic and extent. Returns false when clipped by the near plane.
template <typename T>
inline bool project_one(const T pos[3], const T scale[3], const T rot[4], const CameraT<T>& cam,
                        const Config& cfg, T tcam[3], T mean2d[2], T cov2d[3], T conic[3],
                        T* radius) {
    for (int i = 0; i < 3; ++i)
        tcam[i] = cam.r[3 * i] * pos[0] + cam.r[3 * i + 1] * pos[1] + cam.r[3 * i + 2] * pos[2] +
                  cam.t[i];
    if (!(tcam[2] > static_cast<T>(cfg.near_clip))) return false;

    T tz = tcam[2];
    mean2d[0] = cam.fx * tcam[0] / tz + cam.cx;
    mean2d[1] = cam.fy * tcam[1] / tz + cam.cy;

    // A = J * W, J the projection Jacobian at the mean
    T j00 = cam.fx / tz, j02 = -cam.fx * tcam[0] / (tz * tz);
    T j11 = cam.fy / tz, j12 = -cam.fy * tcam[1] / (tz * tz);
    T a0[3], a1[3];
    for (int k = 0; k < 3; ++k) {
        a0[k] = j00 * cam.r[k] + j02 * cam.r[6 + k];
        a1[k] = j11 * cam.r[3 + k] + j12 * cam.r[6 + k];
    }

    T r[9], qu[4], qn;
    quat_to_rot(rot, r, qu, &qn);
    // M = A * R, then cov2d = M diag(s^2) M^T
    T m0[3], m1[3];
    for (int k = 0; k < 3; ++k) {
        m0[k] = a0[0] * r[k] + a0[1] * r[3 + k] + a0[2] * r[6 + k];
        m1[k] = a1[0] * r[k] + a1[1] * r[3 + k] + a1[2] * r[6 + k];
    }
    T s2[3] = {scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]};
    T caa = static_cast<T>(kCovLowPass), cbb = 0, ccc = static_cast<T>(kCovLowPass);
    for (int k = 0; k < 3; ++k) {
        caa += s2[k] * m0[k] * m0[k];
        cbb += s2[k] * m0[k] * m1[k];
        ccc += s2[k] * m1[k] * m1[k];
    }
    cov2d[0] = caa;
    cov2d[1] = cbb;
    cov2d[2] = ccc;

    T det = caa * ccc - cbb * cbb;
    if (!(det > T(0))) return false;
    conic[0] = ccc / det;
    conic[1] = -cbb / det;
    conic[2] = caa / det;

    T mid = T(0.5) * (caa + ccc);
    T disc = std::sqrt(std::max(T(0), mid * mid - det));
    T eigmax = mid + disc;
    *radius = static_cast<T>(cfg.cutoff) * std::sqrt(eigmax);
    return true;
}

template <typename T>
struct Frame {
    std::vector<Splat<T>> splats;
    std::vector<int> order;        // visible indices sorted by (depth, index)
    std::vector<int> tile_offsets; // CSR over tiles
    std::vector<int> tile_items;
    int tiles_x = 0, tiles_y = 0;
};

template <typename T>
void prepare(int count, const T* pos, const T* scale, const T* rot, const T* opac, const T* sh,
             const CameraT<T>& cam, const Config& cfg, Frame<T>& fr) {
    fr.splats.assign(count, Splat<T>{});
    for (int i = 0; i < count; ++i) {
        Splat<T>& s = fr.splats[i];
        T tcam[3], cov2d[3];
        s.valid = project_one(&pos[3 * i], &scale[3 * i], &rot[4 * i], cam, cfg, tcam, s.mean2d,
                              cov2d, s.conic, &s.radius)
                      ? 1
                      : 0;
        if (!s.valid) continue;
        s.depth = tcam[2];
        s.opacity = opac[i];
        if (s.mean2d[0] + s.radius < 0 || s.mean2d[0] - s.radius > cam.width ||
            s.mean2d[1] + s.radius < 0 || s.mean2d[1] - s.radius > cam.height) {
            s.valid = 0;
            continue;
        }
        T dir[3] = {pos[3 * i] - cam.origin[0], pos[3 * i + 1] - cam.origin[1],
                    pos[3 * i + 2] - cam.origin[2]};
        T n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
        if (n > 0)
            for (T& d : dir) d /= n;
        sh_to_rgb_t(&sh[12 * i], dir, s.rgb);
    }

    fr.order.clear();
    for (int i = 0; i < count; ++i)
        if (fr.splats[i].valid) fr.order.push_back(i);
    std::sort(fr.order.begin(), fr.order.end(), [&](int a, int b) {
        if (fr.splats[a].depth != fr.splats[b].depth) return fr.splats[a].depth < fr.splats[b].depth;
        return a < b;
    });

    int ts = cfg.tile_size;
    fr.tiles_x = (cam.width + ts - 1) / ts;
    fr.tiles_y = (cam.height + ts - 1) / ts;
    int ntiles = fr.tiles_x * fr.tiles_y;

    auto tile_span = [&](const Splat<T>& s, int& tx0, int& tx1, int& ty0, int& ty1) {
        tx0 = std::max(0, static_cast<int>(std::floor((s.mean2d[0] - s.radius) / ts)));
        tx1 = std::min(fr.tiles_x - 1, static_cast<int>(std::floor((s.mean2d[0] + s.radius) / ts)));
        ty0 = std::max(0, static_cast<int>(std::floor((s.mean2d[1] - s.radius) / ts)));
        ty1 = std::min(fr.tiles_y - 1, static_cast<int>(std::floor((s.mean2d[1] + s.radius) / ts)));
    };

    fr.tile_offsets.assign(ntiles + 1, 0);
    for (int idx : fr.order) {
        int tx0, tx1, ty0, ty1;
        tile_span(fr.splats[idx], tx0, tx1, ty0, ty1);
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx) ++fr.tile_offsets[ty * fr.tiles_x + tx + 1];
    }
    for (int i = 0; i < ntiles; ++i) fr.tile_offsets[i + 1] += fr.tile_offsets[i];
    fr.tile_items.assign(fr.tile_offsets.back(), 0);
    std::vector<int> cursor(fr.tile_offsets.begin(), fr.tile_offsets.end() - 1);
    for (int idx : fr.order) {  // sorted order keeps per-tile lists depth-ordered
        int tx0, tx1, ty0, ty1;
        tile_span(fr.splats[idx], tx0, tx1, ty0, ty1);
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx) fr.tile_items[cursor[ty * fr.tiles_x + tx]++] = idx;
    }
}

// Runs fn(first_tile, last_tile) over contiguous chunks; chunk boundaries are
// a pure function of (ntiles, threads), and tiles write disjoint pixels.
inline void parallel_tiles(int ntiles, int threads, const std::function<void(int, int)>& fn) {
    threads = std::max(1, std::min(threads, ntiles == 0 ? 1 : ntiles));
    if (threads == 1) {
        fn(0, ntiles);
        return;
    }
    std::vector<std::thread> pool;
    int per = (ntiles + threads - 1) / threads;
    for (int k = 0; k < threads; ++k) {
        int lo = k * per, hi = std::min(ntiles, lo + per);
        if (lo >= hi) break;
        pool.emplace_back(fn, lo, hi);
    }
    for (auto& th : pool) th.join();
}

template <typename T>
void forward(int count, const T* pos, const T* scale, const T* rot, const T* opac, const T* sh,
             const CameraT<T>& cam, const Config& cfg, const T clear[3], T* out_color,
             T* out_alpha) {
    Frame<T> fr;
    prepare(count, pos, scale, rot, opac, sh, cam, cfg, fr);
    const int ts = cfg.tile_size;
    const size_t npix = static_cast<size_t>(cam.width) * cam.height;
    const T cut2 = static_cast<T>(0.5 * cfg.cutoff * cfg.cutoff);
    const T cap = static_cast<T>(cfg.alpha_cap);

    parallel_tiles(fr.tiles_x * fr.tiles_y, cfg.threads, [&](int t0, int t1) {
        for (int tile = t0; tile < t1; ++tile) {
            int tx = tile % fr.tiles_x, ty = tile / fr.tiles_x;
            int x0 = tx * ts, y0 = ty * ts;
            int x1 = std::min(cam.width, x0 + ts), y1 = std::min(cam.height, y0 + ts);
            const int* items = fr.tile_items.data() + fr.tile_offsets[tile];
            int nitems = fr.tile_offsets[tile + 1] - fr.tile_offsets[tile];
            for (int py = y0; py < y1; ++py) {
                for (int px = x0; px < x1; ++px) {
                    double trans = 1.0, acc[3] = {0, 0, 0}, acc_a = 0.0;
                    T pcx = static_cast<T>(px) + T(0.5), pcy = static_cast<T>(py) + T(0.5);
                    for (int k = 0; k < nitems; ++k) {
                        const Splat<T>& s = fr.splats[items[k]];
                        T dx = pcx - s.mean2d[0], dy = pcy - s.mean2d[1];
                        T power = -T(0.5) * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) -
                                  s.conic[1] * dx * dy;
                        if (power < -cut2) continue;
                        T g = std::exp(std::min(power, T(0)));
                        T alpha = std::min(cap, s.opacity * g);
                        double w = trans * static_cast<double>(alpha);
                        acc[0] += w * s.rgb[0];
                        acc[1] += w * s.rgb[1];
                        acc[2] += w * s.rgb[2];
                        acc_a += w;
                        trans *= 1.0 - static_cast<double>(alpha);
                        if (trans < kMinTransmit) break;
                    }
                    size_t pi = static_cast<size_t>(py) * cam.width + px;
                    for (int ch = 0; ch < 3; ++ch)
                        out_color[ch * npix + pi] =
                            static_cast<T>(acc[ch] + (1.0 - acc_a) * clear[ch]);
                    out_alpha[pi] = static_cast<T>(acc_a);
                }
            }
        }
    });
}

// dR/dq entries for a unit quaternion; accumulates dq from dR.
template <typename T>
inline void rot_backward(const T qu[4], const T dr[9], T dq_unit[4]) {
    T w = qu[0], x = qu[1], y = qu[2], z = qu[3];
    dq_unit[0] = 2 * (dr[1] * -z + dr[2] * y + dr[3] * z + dr[5] * -x + dr[6] * -y + dr[7] * x);
    dq_unit[1] = 2 * (dr[1] * y + dr[2] * z + dr[3] * y + dr[4] * -2 * x + dr[5] * -w +
                      dr[6] * z + dr[7] * w + dr[8] * -2 * x);
    dq_unit[2] = 2 * (dr[0] * -2 * y + dr[1] * x + dr[2] * w + dr[3] * x + dr[5] * z +
                      dr[6] * -w + dr[7] * z + dr[8] * -2 * y);
    dq_unit[3] = 2 * (dr[0] * -2 * z + dr[1] * -w + dr[2] * x + dr[3] * w + dr[4] * -2 * z +
                      dr[5] * y + dr[6] * x + dr[7] * y);
}

template <typename T>
void backward(int count, const T* pos, const T* scale, const T* rot, const T* opac, const T* sh,
              const CameraT<T>& cam, const Config& cfg, const T clear[3], const T* up_color,
              const T* up_alpha, T* g_pos, T* g_scale, T* g_rot, T* g_opac, T* g_sh) {
    Frame<T> fr;
    prepare(count, pos, scale, rot, opac, sh, cam, cfg, fr);
    const int ts = cfg.tile_size;
    const size_t npix = static_cast<size_t>(cam.width) * cam.height;
    const T cut2 = static_cast<T>(0.5 * cfg.cutoff * cfg.cutoff);
    const T cap = static_cast<T>(cfg.alpha_cap);
    const int ntiles = fr.tiles_x * fr.tiles_y;
    const int threads = std::max(1, cfg.threads);

    // pixel-level accumulators per Gaussian: dmean(2), dconic(3), dopac, drgb(3)
    const int acc_w = 9;
    int workers = std::max(1, std::min(threads, ntiles == 0 ? 1 : ntiles));
    std::vector<std::vector<double>> worker_acc(workers);
    int per = ntiles == 0 ? 0 : (ntiles + workers - 1) / workers;

    auto run_worker = [&](int wk) {
        auto& acc = worker_acc[wk];
        acc.assign(static_cast<size_t>(count) * acc_w, 0.0);
        int t0 = wk * per, t1 = std::min(ntiles, t0 + per);
        struct Contrib {
            int idx;
            T alpha, g;
            double trans;  // transmittance in front of this splat
        };
        std::vector<Contrib> stack;
        for (int tile = t0; tile < t1; ++tile) {
            int tx = tile % fr.tiles_x, ty = tile / fr.tiles_x;
            int x0 = tx * ts, y0 = ty * ts;
            int x1 = std::min(cam.width, x0 + ts), y1 = std::min(cam.height, y0 + ts);
            const int* items = fr.tile_items.data() + fr.tile_offsets[tile];
            int nitems = fr.tile_offsets[tile + 1] - fr.tile_offsets[tile];
            stack.reserve(nitems);
            for (int py = y0; py < y1; ++py) {
                for (int px = x0; px < x1; ++px) {
                    stack.clear();
                    double trans = 1.0, acc_a = 0.0;
                    T pcx = static_cast<T>(px) + T(0.5), pcy = static_cast<T>(py) + T(0.5);
                    for (int k = 0; k < nitems; ++k) {
                        const Splat<T>& s = fr.splats[items[k]];
                        T dx = pcx - s.mean2d[0], dy = pcy - s.mean2d[1];
                        T power = -T(0.5) * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) -
                                  s.conic[1] * dx * dy;
                        if (power < -cut2) continue;
                        T g = std::exp(std::min(power, T(0)));
                        T alpha = std::min(cap, s.opacity * g);
                        stack.push_back({items[k], alpha, g, trans});
                        acc_a += trans * static_cast<double>(alpha);
                        trans *= 1.0 - static_cast<double>(alpha);
                        if (trans < kMinTransmit) break;
                    }
                    if (stack.empty()) continue;
                    size_t pi = static_cast<size_t>(py) * cam.width + px;
                    double d_color[3] = {static_cast<double>(up_color[pi]),
                                         static_cast<double>(up_color[npix + pi]),
                                         static_cast<double>(up_color[2 * npix + pi])};
                    // out = acc + (1 - acc_a) * clear; alpha_out = acc_a
                    double d_acc_a = static_cast<double>(up_alpha[pi]);
                    for (int ch = 0; ch < 3; ++ch) d_acc_a -= d_color[ch] * clear[ch];

                    double sfx_c[3] = {0, 0, 0}, sfx_a = 0.0;
                    for (size_t k = stack.size(); k-- > 0;) {
                        const Contrib& cb = stack[k];
                        const Splat<T>& s = fr.splats[cb.idx];
                        double ti = cb.trans;
                        double ai = static_cast<double>(cb.alpha);
                        double w = ti * ai;
                        double inv1ma = 1.0 / (1.0 - ai);
                        double d_alpha = d_acc_a * (ti - sfx_a * inv1ma);
                        for (int ch = 0; ch < 3; ++ch)
                            d_alpha += d_color[ch] * (ti * s.rgb[ch] - sfx_c[ch] * inv1ma);
                        double* ga = &acc[static_cast<size_t>(cb.idx) * acc_w];
                        for (int ch = 0; ch < 3; ++ch) {
                            ga[6 + ch] += d_color[ch] * w;  // drgb
                            sfx_c[ch] += w * s.rgb[ch];
                        }
                        sfx_a += w;
                        if (static_cast<double>(s.opacity) * cb.g < cap) {
                            ga[5] += d_alpha * cb.g;  // dopacity
                            double d_power = d_alpha * s.opacity * cb.g;
                            T dx = pcx - s.mean2d[0], dy = pcy - s.mean2d[1];
                            // dpower/dmean = conic * d
                            ga[0] += d_power * (s.conic[0] * dx + s.conic[1] * dy);
                            ga[1] += d_power * (s.conic[1] * dx + s.conic[2] * dy);
                            ga[2] += d_power * (-0.5 * dx * dx);
                            ga[3] += d_power * (-static_cast<double>(dx) * dy);
                            ga[4] += d_power * (-0.5 * dy * dy);
                        }
                    }
                }
            }
        }
    };

    if (workers == 1) {
        run_worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < workers; ++k) pool.emplace_back(run_worker, k);
        for (auto& th : pool) th.join();
    }
    std::vector<double>& total = worker_acc[0];
    if (total.empty()) total.assign(static_cast<size_t>(count) * acc_w, 0.0);
    for (int wk = 1; wk < workers; ++wk) {
        if (worker_acc[wk].empty()) continue;
        for (size_t i = 0; i < total.size(); ++i) total[i] += worker_acc[wk][i];
    }

    // convert pixel-level gradients to parameter gradients
    for (int i = 0; i < count; ++i) {
        const Splat<T>& s = fr.splats[i];
        if (!s.valid) continue;
        const double* ga = &total[static_cast<size_t>(i) * acc_w];
        bool any = false;
        for (int k = 0; k < acc_w; ++k) any = any || ga[k] != 0.0;
        if (!any) continue;

        g_opac[i] += static_cast<T>(ga[5]);

        // color -> SH coefficients and view direction
        double dirv[3] = {pos[3 * i] - cam.origin[0], pos[3 * i + 1] - cam.origin[1],
                          pos[3 * i + 2] - cam.origin[2]};
        double rlen = std::sqrt(dirv[0] * dirv[0] + dirv[1] * dirv[1] + dirv[2] * dirv[2]);
        double dir[3] = {dirv[0] / rlen, dirv[1] / rlen, dirv[2] / rlen};
        double basis[4] = {kSH0, -kSH1 * dir[1], kSH1 * dir[2], -kSH1 * dir[0]};
        double ddir[3] = {0, 0, 0};
        for (int ch = 0; ch < 3; ++ch) {
            double v = 0.5;
            for (int b = 0; b < 4; ++b) v += sh[12 * i + 3 * b + ch] * basis[b];
            if (v <= 0.0 || v >= 1.0) continue;  // clamped channel
            double gc = ga[6 + ch];
            for (int b = 0; b < 4; ++b) g_sh[12 * i + 3 * b + ch] += static_cast<T>(gc * basis[b]);
            ddir[0] += gc * (-kSH1) * sh[12 * i + 9 + ch];  // basis 3 ~ -x
            ddir[1] += gc * (-kSH1) * sh[12 * i + 3 + ch];  // basis 1 ~ -y
            ddir[2] += gc * (kSH1)*sh[12 * i + 6 + ch];     // basis 2 ~ +z
        }
        double dp_dir[3];
        double dot = dir[0] * ddir[0] + dir[1] * ddir[1] + dir[2] * ddir[2];
        for (int k = 0; k < 3; ++k) dp_dir[k] = (ddir[k] - dir[k] * dot) / rlen;

        // conic -> cov2d: G2 = -K M K with M the symmetric matrix of conic partials
        double ka = s.conic[0], kb = s.conic[1], kc = s.conic[2];
        double m00 = ga[2], m01 = 0.5 * ga[3], m11 = ga[4];
        // K M
        double km00 = ka * m00 + kb * m01, km01 = ka * m01 + kb * m11;
        double km10 = kb * m00 + kc * m01, km11 = kb * m01 + kc * m11;
        double g2_00 = -(km00 * ka + km01 * kb);
        double g2_01 = -(km00 * kb + km01 * kc);
        double g2_11 = -(km10 * kb + km11 * kc);

        // recompute the projection chain
        double tcam[3];
        for (int r3 = 0; r3 < 3; ++r3)
            tcam[r3] = cam.r[3 * r3] * pos[3 * i] + cam.r[3 * r3 + 1] * pos[3 * i + 1] +
                       cam.r[3 * r3 + 2] * pos[3 * i + 2] + cam.t[r3];
        double tz = tcam[2];
        double j00 = cam.fx / tz, j02 = -cam.fx * tcam[0] / (tz * tz);
        double j11 = cam.fy / tz, j12 = -cam.fy * tcam[1] / (tz * tz);
        double a0[3], a1[3];
        for (int k = 0; k < 3; ++k) {
            a0[k] = j00 * cam.r[k] + j02 * cam.r[6 + k];
            a1[k] = j11 * cam.r[3 + k] + j12 * cam.r[6 + k];
        }
        T rq[9], qu[4], qn;
        quat_to_rot(&rot[4 * i], rq, qu, &qn);
        double s2[3] = {static_cast<double>(scale[3 * i]) * scale[3 * i],
                        static_cast<double>(scale[3 * i + 1]) * scale[3 * i + 1],
                        static_cast<double>(scale[3 * i + 2]) * scale[3 * i + 2]};

        // sigma3 = Rq diag(s2) Rq^T (world frame); A rows a0, a1
        double sig3[9];
        for (int r3 = 0; r3 < 3; ++r3)
            for (int c3 = 0; c3 < 3; ++c3) {
                double v = 0;
                for (int k = 0; k < 3; ++k) v += rq[3 * r3 + k] * s2[k] * rq[3 * c3 + k];
                sig3[3 * r3 + c3] = v;
            }

        // G3 = A^T G2 A
        double g3[9];
        for (int r3 = 0; r3 < 3; ++r3)
            for (int c3 = 0; c3 < 3; ++c3)
                g3[3 * r3 + c3] = a0[r3] * (g2_00 * a0[c3] + g2_01 * a1[c3]) +
                                  a1[r3] * (g2_01 * a0[c3] + g2_11 * a1[c3]);

        // dA = 2 G2 A Sig3  (rows)
        double as0[3], as1[3];  // A * Sig3
        for (int k = 0; k < 3; ++k) {
            as0[k] = a0[0] * sig3[k] + a0[1] * sig3[3 + k] + a0[2] * sig3[6 + k];
            as1[k] = a1[0] * sig3[k] + a1[1] * sig3[3 + k] + a1[2] * sig3[6 + k];
        }
        double da0[3], da1[3];
        for (int k = 0; k < 3; ++k) {
            da0[k] = 2 * (g2_00 * as0[k] + g2_01 * as1[k]);
            da1[k] = 2 * (g2_01 * as0[k] + g2_11 * as1[k]);
        }

        // dJ = dA W^T; only j00, j02, j11, j12 are nonzero entries of J
        double dj00 = 0, dj02 = 0, dj11 = 0, dj12 = 0;
        for (int k = 0; k < 3; ++k) {
            dj00 += da0[k] * cam.r[k];
            dj02 += da0[k] * cam.r[6 + k];
            dj11 += da1[k] * cam.r[3 + k];
            dj12 += da1[k] * cam.r[6 + k];
        }

        // mean2d and J depend on the camera-frame mean
        double dt[3] = {0, 0, 0};
        double gmx = ga[0], gmy = ga[1];
        dt[0] += gmx * cam.fx / tz + dj02 * (-cam.fx / (tz * tz));
        dt[1] += gmy * cam.fy / tz + dj12 * (-cam.fy / (tz * tz));
        dt[2] += -gmx * cam.fx * tcam[0] / (tz * tz) - gmy * cam.fy * tcam[1] / (tz * tz) +
                 dj00 * (-cam.fx / (tz * tz)) + dj02 * (2 * cam.fx * tcam[0] / (tz * tz * tz)) +
                 dj11 * (-cam.fy / (tz * tz)) + dj12 * (2 * cam.fy * tcam[1] / (tz * tz * tz));

        for (int k = 0; k < 3; ++k)
            g_pos[3 * i + k] += static_cast<T>(cam.r[k] * dt[0] + cam.r[3 + k] * dt[1] +
                                               cam.r[6 + k] * dt[2] + dp_dir[k]);

        // scales: ds_k = 2 s_k r_k^T G3 r_k (r_k the k-th column of Rq)
        for (int k = 0; k < 3; ++k) {
            double rk[3] = {rq[k], rq[3 + k], rq[6 + k]};
            double quad = 0;
            for (int r3 = 0; r3 < 3; ++r3)
                for (int c3 = 0; c3 < 3; ++c3) quad += rk[r3] * g3[3 * r3 + c3] * rk[c3];
            g_scale[3 * i + k] += static_cast<T>(2.0 * scale[3 * i + k] * quad);
        }

        // rotation: dR = 2 G3 Rq diag(s2), then through normalization
        double dr[9];
        for (int r3 = 0; r3 < 3; ++r3)
            for (int c3 = 0; c3 < 3; ++c3) {
                double v = 0;
                for (int k = 0; k < 3; ++k) v += g3[3 * r3 + k] * rq[3 * k + c3];
                dr[3 * r3 + c3] = 2.0 * v * s2[c3];
            }
        T drt[9];
        for (int k = 0; k < 9; ++k) drt[k] = static_cast<T>(dr[k]);
        T dqu[4];
        rot_backward(qu, drt, dqu);
        if (qn > T(1e-12)) {
            T dot4 = qu[0] * dqu[0] + qu[1] * dqu[1] + qu[2] * dqu[2] + qu[3] * dqu[3];
            for (int k = 0; k < 4; ++k) g_rot[4 * i + k] += (dqu[k] - qu[k] * dot4) / qn;
        }
    }
}

}  // namespace headsup::raster
