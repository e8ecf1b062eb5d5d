#pragma once

#include "headsup/nn/tape.hpp"

namespace headsup::nn {

// elementwise
Id add(Tape& t, Id a, Id b);
Id sub(Tape& t, Id a, Id b);
Id mul(Tape& t, Id a, Id b);
Id scale(Tape& t, Id a, float s);
Id add_scalar(Tape& t, Id a, float s);
Id square(Tape& t, Id a);
Id abs_op(Tape& t, Id a);
Id gelu(Tape& t, Id a);
Id leaky_relu(Tape& t, Id a, float slope = 0.2f);
Id relu(Tape& t, Id a);
Id tanh_op(Tape& t, Id a);
Id sigmoid_op(Tape& t, Id a);

// y = s[0] * x with a learnable scalar s (residual branch gate)
Id scale_by(Tape& t, Id x, Id s);

// reductions
Id mean_all(Tape& t, Id a);
Id sum_all(Tape& t, Id a);

// linear algebra
Id matmul(Tape& t, Id a, Id b);                      // (m,k) x (k,n)
Id linear(Tape& t, Id x, Id w, Id b = Tape::kNone);  // x (T,in), w (out,in) -> (T,out)

// conv / spatial
Id conv2d(Tape& t, Id x, Id w, Id b, int stride, int pad);
Id upsample_nearest2x(Tape& t, Id x);
Id resize_bilinear_op(Tape& t, Id x, int oh, int ow);
Id global_avg_pool(Tape& t, Id x);  // (C,H,W) -> (C)
Id concat_ch(Tape& t, Id a, Id b);
Id slice_ch(Tape& t, Id x, int c0, int c1);
Id reshape_op(Tape& t, Id x, std::vector<int> shape);

// (C,H,W) <-> (H*W, C) token layout
Id to_tokens(Tape& t, Id x);
Id from_tokens(Tape& t, Id x, int h, int w);
Id concat_rows(Tape& t, const std::vector<Id>& parts);

// normalization
Id layer_norm(Tape& t, Id x, Id gamma, Id beta, float eps = 1e-5f);  // rows of (T,C)
Id group_norm(Tape& t, Id x, int groups, Id gamma, Id beta, float eps = 1e-5f);
Id batch_norm2d(Tape& t, Id x, Id gamma, Id beta, Param& run_mean, Param& run_var, bool training,
                float momentum = 0.1f, float eps = 1e-5f);
Id normalize_channels(Tape& t, Id x, float eps = 1e-8f);  // unit L2 over C per pixel

// attention
Id softmax_lastdim(Tape& t, Id x);
Id attn_scores(Tape& t, Id q, Id k, int heads);      // (T,d),(S,d) -> (heads,T,S)
Id attn_mix(Tape& t, Id probs, Id v, int heads);     // (heads,T,S),(S,d) -> (T,d)

// weight / sigma for spectral normalization (one power iteration per call
// when update_u; u lives in a non-trainable Param buffer)
Id spectral_scale(Tape& t, Id w, Param& u_state, bool update_u);

}  // namespace headsup::nn
