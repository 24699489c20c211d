#include "scenes/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <stdexcept>

namespace scenes {

namespace {

cv::Mat to_mat_u8(const torch::Tensor& t) {
    // t: [C,H,W] float in [0,1] -> HxW C-channel u8
    auto q = (t.detach().to(torch::kFloat32).clamp(0, 1) * 255.0).round().to(torch::kUInt8);
    q = q.permute({1, 2, 0}).contiguous();  // HWC
    const int h = static_cast<int>(q.size(0));
    const int w = static_cast<int>(q.size(1));
    const int c = static_cast<int>(q.size(2));
    cv::Mat m(h, w, CV_8UC(c));
    std::memcpy(m.data, q.data_ptr<uint8_t>(), static_cast<size_t>(h) * w * c);
    return m;
}

}  // namespace

void write_image_png(const std::filesystem::path& path, const torch::Tensor& image_rgb) {
    if (image_rgb.dim() != 3 || image_rgb.size(0) != 3) {
        throw std::invalid_argument("write_image_png: expected [3,H,W]");
    }
    // OpenCV wants BGR channel order.
    cv::Mat bgr = to_mat_u8(image_rgb.flip(0));
    if (!cv::imwrite(path.string(), bgr)) {
        throw std::runtime_error("write_image_png: failed to write " + path.string());
    }
}

void write_mask_png(const std::filesystem::path& path, const torch::Tensor& mask) {
    torch::Tensor m = mask;
    if (m.dim() == 3 && m.size(0) == 1) m = m.squeeze(0);
    if (m.dim() != 2) {
        throw std::invalid_argument("write_mask_png: expected [1,H,W] or [H,W]");
    }
    cv::Mat gray = to_mat_u8(m.unsqueeze(0));
    if (!cv::imwrite(path.string(), gray)) {
        throw std::runtime_error("write_mask_png: failed to write " + path.string());
    }
}

torch::Tensor read_image_png(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
        throw std::runtime_error("read_image_png: cannot read " + path.string());
    }
    auto t = torch::from_blob(bgr.data, {bgr.rows, bgr.cols, 3}, torch::kUInt8).clone();
    return t.permute({2, 0, 1}).flip(0).contiguous().to(torch::kFloat32) / 255.0;
}

torch::Tensor read_mask_png(const std::filesystem::path& path) {
    cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty()) {
        throw std::runtime_error("read_mask_png: cannot read " + path.string());
    }
    auto t = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8).clone();
    return t.unsqueeze(0).to(torch::kFloat32) / 255.0;
}

torch::Tensor tile_grid(const std::vector<torch::Tensor>& images, int64_t columns,
                        int64_t pad, double pad_value) {
    if (images.empty()) throw std::invalid_argument("tile_grid: no images");
    const int64_t h = images.front().size(-2);
    const int64_t w = images.front().size(-1);
    const int64_t n = static_cast<int64_t>(images.size());
    const int64_t rows = (n + columns - 1) / columns;
    auto canvas = torch::full({3, rows * (h + pad) + pad, columns * (w + pad) + pad}, pad_value,
                             torch::kFloat32);
    for (int64_t i = 0; i < n; ++i) {
        torch::Tensor im = images[i].detach().to(torch::kFloat32);
        if (im.dim() == 2) im = im.unsqueeze(0);
        if (im.size(0) == 1) im = im.expand({3, h, w});
        const int64_t r = i / columns, c = i % columns;
        canvas.index_put_({torch::indexing::Slice(),
                           torch::indexing::Slice(pad + r * (h + pad), pad + r * (h + pad) + h),
                           torch::indexing::Slice(pad + c * (w + pad), pad + c * (w + pad) + w)},
                          im);
    }
    return canvas;
}

}  // namespace scenes
